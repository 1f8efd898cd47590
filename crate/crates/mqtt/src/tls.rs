//! TLS configuration from PEM files, plus self-signed development
//! certificates for local brokers and tests.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rcgen::{BasicConstraints, CertificateParams, DistinguishedName, DnType, IsCa, KeyPair};
use rustls::pki_types::{CertificateDer, PrivateKeyDer};
use rustls::{ClientConfig, RootCertStore, ServerConfig};

use crate::error::MqttError;

fn provider() -> Arc<rustls::crypto::CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

fn read(path: &Path) -> Result<Vec<u8>, MqttError> {
    fs::read(path).map_err(|e| MqttError::Tls(format!("cannot read {}: {e}", path.display())))
}

pub fn load_certs(path: &Path) -> Result<Vec<CertificateDer<'static>>, MqttError> {
    let pem = read(path)?;
    let certs = rustls_pemfile::certs(&mut BufReader::new(&pem[..]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| MqttError::Tls(format!("invalid certificate PEM in {}: {e}", path.display())))?;
    if certs.is_empty() {
        return Err(MqttError::Tls(format!("no certificates found in {}", path.display())));
    }
    Ok(certs)
}

pub fn load_key(path: &Path) -> Result<PrivateKeyDer<'static>, MqttError> {
    let pem = read(path)?;
    rustls_pemfile::private_key(&mut BufReader::new(&pem[..]))
        .map_err(|e| MqttError::Tls(format!("invalid key PEM in {}: {e}", path.display())))?
        .ok_or_else(|| MqttError::Tls(format!("no private key found in {}", path.display())))
}

/// Client configuration trusting only the CA certificates in `ca_path`.
pub fn client_config(ca_path: &Path) -> Result<Arc<ClientConfig>, MqttError> {
    let mut roots = RootCertStore::empty();
    for cert in load_certs(ca_path)? {
        roots
            .add(cert)
            .map_err(|e| MqttError::Tls(format!("unusable CA certificate in {}: {e}", ca_path.display())))?;
    }
    let config = ClientConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(|e| MqttError::Tls(e.to_string()))?
        .with_root_certificates(roots)
        .with_no_client_auth();
    Ok(Arc::new(config))
}

pub fn server_config(cert_path: &Path, key_path: &Path) -> Result<Arc<ServerConfig>, MqttError> {
    let certs = load_certs(cert_path)?;
    let key = load_key(key_path)?;
    let config = ServerConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(|e| MqttError::Tls(e.to_string()))?
        .with_no_client_auth()
        .with_single_cert(certs, key)
        .map_err(|e| MqttError::Tls(format!("certificate/key mismatch: {e}")))?;
    Ok(Arc::new(config))
}

/// Paths of a generated development PKI.
#[derive(Debug, Clone)]
pub struct DevCertificates {
    pub ca_cert: PathBuf,
    pub server_cert: PathBuf,
    pub server_key: PathBuf,
}

impl DevCertificates {
    /// Writes a throwaway CA and a server certificate valid for `localhost`
    /// and `127.0.0.1` (plus any extra names) into `dir`.
    pub fn generate(dir: &Path, extra_names: &[String]) -> Result<Self, MqttError> {
        let tls = |e: rcgen::Error| MqttError::Tls(format!("certificate generation failed: {e}"));
        fs::create_dir_all(dir)?;

        let ca_key = KeyPair::generate().map_err(tls)?;
        let mut ca_params = CertificateParams::new(Vec::<String>::new()).map_err(tls)?;
        ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        let mut dn = DistinguishedName::new();
        dn.push(DnType::CommonName, "LIFY development CA");
        ca_params.distinguished_name = dn;
        let ca = ca_params.self_signed(&ca_key).map_err(tls)?;

        let mut names = vec!["localhost".to_string(), "127.0.0.1".to_string()];
        names.extend(extra_names.iter().cloned());
        let server_key = KeyPair::generate().map_err(tls)?;
        let mut params = CertificateParams::new(names).map_err(tls)?;
        let mut dn = DistinguishedName::new();
        dn.push(DnType::CommonName, "lify-broker");
        params.distinguished_name = dn;
        let server = params.signed_by(&server_key, &ca, &ca_key).map_err(tls)?;

        let out = DevCertificates {
            ca_cert: dir.join("ca.pem"),
            server_cert: dir.join("server.pem"),
            server_key: dir.join("server.key"),
        };
        fs::write(&out.ca_cert, ca.pem())?;
        fs::write(&out.server_cert, server.pem())?;
        fs::write(&out.server_key, server_key.serialize_pem())?;
        Ok(out)
    }
}
