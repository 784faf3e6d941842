//! Minimal reference endpoints speaking a length-prefixed file transfer
//! over plain TCP on loopback. They honour the same environment-variable
//! interface as real endpoint wrappers, so the harness can be exercised
//! end to end without any QUIC stack installed.
//!
//! Protocol: client sends the requested file name as a `u16`-length-prefixed
//! UTF-8 string; server replies with an 8-byte big-endian body length
//! followed by the body, then closes. One transfer per server process.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("malformed {0}: {1}")]
    BadEnv(&'static str, String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
}

fn env_var(name: &'static str) -> Result<String, EndpointError> {
    std::env::var(name).map_err(|_| EndpointError::MissingEnv(name))
}

/// Server-side configuration from the environment contract.
pub struct ServerConfig {
    pub ip: String,
    pub port: u16,
    pub www: PathBuf,
}

impl ServerConfig {
    pub fn from_env() -> Result<Self, EndpointError> {
        let ip = env_var("IP")?;
        let port = env_var("PORT")?
            .parse()
            .map_err(|e| EndpointError::BadEnv("PORT", format!("{e}")))?;
        let www = PathBuf::from(env_var("WWW")?);
        Ok(ServerConfig { ip, port, www })
    }
}

/// Client-side configuration from the environment contract.
pub struct ClientConfig {
    pub ip: String,
    pub port: u16,
    pub requests: String,
    pub downloads: PathBuf,
}

impl ClientConfig {
    pub fn from_env() -> Result<Self, EndpointError> {
        let ip = env_var("IP")?;
        let port = env_var("PORT")?
            .parse()
            .map_err(|e| EndpointError::BadEnv("PORT", format!("{e}")))?;
        let requests = env_var("REQUESTS")?;
        let downloads = PathBuf::from(env_var("DOWNLOADS")?);
        Ok(ClientConfig {
            ip,
            port,
            requests,
            downloads,
        })
    }
}

/// Last path segment of a request URL; rejects traversal.
pub fn requested_file_name(url: &str) -> Result<String, EndpointError> {
    let name = url
        .rsplit('/')
        .next()
        .unwrap_or_default()
        .to_string();
    if name.is_empty() || name == ".." || name.contains('\\') {
        return Err(EndpointError::Protocol(format!(
            "cannot extract a file name from request `{url}`"
        )));
    }
    Ok(name)
}

fn read_exact_checked(reader: &mut impl Read, buf: &mut [u8]) -> Result<(), EndpointError> {
    reader
        .read_exact(buf)
        .map_err(|e| EndpointError::Protocol(format!("short read: {e}")))
}

/// Serve exactly one transfer, then return. Prints `READY` on stdout once
/// listening so the orchestrator can start the client.
pub fn serve_once(config: &ServerConfig) -> Result<(), EndpointError> {
    let listener = TcpListener::bind((config.ip.as_str(), config.port))?;
    println!("READY");
    // Line-buffered stdout may hold the readiness line back when piped.
    std::io::stdout().flush()?;
    let (stream, _) = listener.accept()?;
    handle_connection(stream, &config.www)
}

fn handle_connection(stream: TcpStream, www: &Path) -> Result<(), EndpointError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len_buf = [0u8; 2];
    read_exact_checked(&mut reader, &mut len_buf)?;
    let name_len = u16::from_be_bytes(len_buf) as usize;
    let mut name_buf = vec![0u8; name_len];
    read_exact_checked(&mut reader, &mut name_buf)?;
    let name = String::from_utf8(name_buf)
        .map_err(|e| EndpointError::Protocol(format!("request name not utf-8: {e}")))?;
    if name.contains('/') || name.contains("..") {
        return Err(EndpointError::Protocol(format!(
            "request `{name}` escapes the www root"
        )));
    }
    let path = www.join(&name);
    let mut file = std::fs::File::open(&path)?;
    let size = file.metadata()?.len();
    let mut writer = BufWriter::new(stream);
    writer.write_all(&size.to_be_bytes())?;
    std::io::copy(&mut file, &mut writer)?;
    writer.flush()?;
    Ok(())
}

/// Fetch the requested file into the downloads directory and print
/// `duration_ms=<int>` for the orchestrator. The duration covers only the
/// transfer, not connection setup.
pub fn fetch_once(config: &ClientConfig) -> Result<(), EndpointError> {
    let name = requested_file_name(&config.requests)?;
    let stream = TcpStream::connect((config.ip.as_str(), config.port))?;
    stream.set_nodelay(true)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let name_bytes = name.as_bytes();
    let name_len = u16::try_from(name_bytes.len())
        .map_err(|_| EndpointError::Protocol(format!("file name `{name}` too long")))?;
    writer.write_all(&name_len.to_be_bytes())?;
    writer.write_all(name_bytes)?;
    writer.flush()?;

    let mut reader = BufReader::new(stream);
    let started = Instant::now();
    let mut size_buf = [0u8; 8];
    read_exact_checked(&mut reader, &mut size_buf)?;
    let size = u64::from_be_bytes(size_buf);
    std::fs::create_dir_all(&config.downloads)?;
    let out_path = config.downloads.join(&name);
    let mut out = BufWriter::new(std::fs::File::create(&out_path)?);
    let copied = std::io::copy(&mut reader.by_ref().take(size), &mut out)?;
    out.flush()?;
    let elapsed_ms = started.elapsed().as_millis();
    if copied != size {
        return Err(EndpointError::Protocol(format!(
            "body truncated: announced {size} bytes, received {copied}"
        )));
    }
    println!("duration_ms={elapsed_ms}");
    Ok(())
}
