//! Wire stub for remote oracles: a JSON-over-TCP request/response pair
//! mirroring a prediction API, plus a loopback server that fronts a local
//! victim. One request per connection; the client half-closes its write
//! side to mark end of request.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::oracle::{LocalVictim, Oracle, OracleResponse, QueryLedger};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

pub const API_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct WireRequest {
    #[serde(rename = "api-version")]
    pub api_version: u32,
    pub batch: Vec<WireSample>,
}

#[derive(Serialize, Deserialize)]
pub struct WireSample {
    pub id: u64,
    pub shape: Vec<usize>,
    /// base64-encoded little-endian float32 pixels
    pub image: String,
}

#[derive(Serialize, Deserialize)]
pub struct WireResponse {
    pub batch: Vec<WireResponseItem>,
}

#[derive(Serialize, Deserialize)]
pub struct WireResponseItem {
    pub id: u64,
    pub label: usize,
    #[serde(rename = "top-k", skip_serializing_if = "Option::is_none")]
    pub top_k: Option<Vec<WireScore>>,
}

#[derive(Serialize, Deserialize)]
pub struct WireScore {
    pub index: usize,
    pub probability: f64,
}

pub fn encode_sample(sample: &Sample) -> WireSample {
    let mut bytes = Vec::with_capacity(sample.image.len() * 4);
    for &v in sample.image.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    WireSample {
        id: sample.id,
        shape: sample.image.shape().to_vec(),
        image: BASE64.encode(bytes),
    }
}

pub fn decode_sample(ws: &WireSample) -> Result<Sample> {
    let bytes = BASE64
        .decode(&ws.image)
        .map_err(|e| Error::Serde(format!("bad base64 image for id {}: {e}", ws.id)))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Serde(format!("image byte length not f32-aligned for id {}", ws.id)));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Sample::new(ws.id, Tensor::new(ws.shape.clone(), data)?)
}

fn response_to_wire(r: &OracleResponse) -> WireResponseItem {
    WireResponseItem {
        id: r.sample_id,
        label: r.label,
        top_k: r.posterior.as_ref().map(|p| {
            p.iter()
                .map(|&(index, probability)| WireScore { index, probability })
                .collect()
        }),
    }
}

fn wire_to_response(item: WireResponseItem) -> OracleResponse {
    OracleResponse {
        sample_id: item.id,
        label: item.label,
        posterior: item
            .top_k
            .map(|scores| scores.into_iter().map(|s| (s.index, s.probability)).collect()),
    }
}

/// Loopback server exposing a local victim over the wire format.
pub struct WireServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl WireServer {
    /// Bind `127.0.0.1:0` and serve until dropped or stopped.
    pub fn spawn(victim: LocalVictim) -> Result<WireServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = conn {
                    // per-connection errors only drop that connection
                    let _ = handle_connection(stream, &victim);
                }
            }
        });
        Ok(WireServer { addr, stop, handle: Some(handle) })
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WireServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle_connection(mut stream: TcpStream, victim: &LocalVictim) -> Result<()> {
    let mut buf = String::new();
    stream.read_to_string(&mut buf)?;
    if buf.is_empty() {
        return Ok(());
    }
    let request: WireRequest = serde_json::from_str(&buf)?;
    if request.api_version != API_VERSION {
        return Err(Error::Serde(format!("unsupported api-version {}", request.api_version)));
    }
    let samples: Vec<Sample> = request
        .batch
        .iter()
        .map(decode_sample)
        .collect::<Result<_>>()?;
    let responses = victim.measure_batch(&samples)?;
    let reply = WireResponse { batch: responses.iter().map(response_to_wire).collect() };
    stream.write_all(serde_json::to_string(&reply)?.as_bytes())?;
    Ok(())
}

/// Client-side oracle handle speaking the wire format to an endpoint.
/// Transport failures surface as `RemoteUnavailable` and never charge
/// the ledger; successful deliveries are billed per sample.
pub struct RemoteOracle {
    endpoint: String,
    num_classes: usize,
}

/// Build a remote oracle handle for `endpoint` (`host:port`).
pub fn remote_client_stub(endpoint: &str, num_classes: usize) -> Result<RemoteOracle> {
    if endpoint.is_empty() {
        return Err(Error::InvalidArgument("empty endpoint descriptor".into()));
    }
    Ok(RemoteOracle { endpoint: endpoint.to_string(), num_classes })
}

impl RemoteOracle {
    fn round_trip(&self, samples: &[Sample]) -> Result<Vec<OracleResponse>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let request = WireRequest {
            api_version: API_VERSION,
            batch: samples.iter().map(encode_sample).collect(),
        };
        let body = serde_json::to_string(&request)?;
        let mut stream = TcpStream::connect(&self.endpoint)
            .map_err(|e| Error::RemoteUnavailable(format!("{}: {e}", self.endpoint)))?;
        stream
            .write_all(body.as_bytes())
            .and_then(|_| stream.shutdown(Shutdown::Write))
            .map_err(|e| Error::RemoteUnavailable(format!("send failed: {e}")))?;
        let mut reply = String::new();
        stream
            .read_to_string(&mut reply)
            .map_err(|e| Error::RemoteUnavailable(format!("receive failed: {e}")))?;
        let parsed: WireResponse = serde_json::from_str(&reply)?;
        if parsed.batch.len() != samples.len() {
            return Err(Error::RemoteUnavailable(format!(
                "short response: {} of {} samples answered",
                parsed.batch.len(),
                samples.len()
            )));
        }
        Ok(parsed.batch.into_iter().map(wire_to_response).collect())
    }
}

impl Oracle for RemoteOracle {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn query_batch(
        &self,
        samples: &[Sample],
        ledger: &mut QueryLedger,
    ) -> Result<Vec<OracleResponse>> {
        let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        if ledger.spent() + ids.len() as u64 > ledger.budget() {
            return Err(Error::BudgetExhausted {
                spent: ledger.spent(),
                budget: ledger.budget(),
                requested: ids.len() as u64,
            });
        }
        // transport first: only delivered responses are billed
        let responses = self.round_trip(samples)?;
        ledger.charge(&ids)?;
        Ok(responses)
    }

    fn measure_batch(&self, samples: &[Sample]) -> Result<Vec<OracleResponse>> {
        self.round_trip(samples)
    }
}
