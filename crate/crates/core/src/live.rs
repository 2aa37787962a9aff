//! HTTP adapters for every external port. Each backend URL is a base; paths
//! are fixed:
//!
//! | port | method and path | request | reply |
//! |---|---|---|---|
//! | labeler | `POST {LLM}/classify` | JSON with base64 PNG crops | `{"label"}` |
//! | chat (planner, brainstorm) | `POST {LLM}/chat` | [`ChatRequest`] | `{"text"}` |
//! | boost | `POST {LLM}/boost` | `{"system","prompt","seed"}` | `{"text"}` |
//! | embedder | `POST {EMBED}/embed` | `{"label"}` | `{"vector"}` |
//! | image | `POST {IMG}/image` | `{"prompt","seed"}` | PNG |
//! | background removal | `POST {IMG}/remove-background` | PNG | PNG with alpha |
//! | mesher | `POST {MESH}/mesh?prompt=..&seed=..` | PNG | zip with one `.obj` |

use std::io::{Cursor, Read};
use std::time::Duration;

use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::agents::{ChatPort, ChatRequest, PROMPT_BOOST, PROMPT_CLASSIFY};
use crate::assets::{BgRemovalPort, BoostPort, ImagePort, MeshBundle, MesherPort};
use crate::eval::{EmbedError, LabelEmbedder};
use crate::labeler::{VlmPort, VlmRequest};
use crate::ports::{HttpClient, PortError};

fn png_b64(img: &RgbImage) -> String {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
        .expect("in-memory png encode");
    base64::engine::general_purpose::STANDARD.encode(buf)
}

#[derive(Deserialize)]
struct LabelReply {
    label: String,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Serialize)]
struct ClassifyBody<'a> {
    system: &'a str,
    mask_id: u32,
    object_crop_png: String,
    context_crop_png: String,
    known_labels: &'a [String],
}

pub struct HttpVlm {
    client: HttpClient,
}

impl HttpVlm {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

impl VlmPort for HttpVlm {
    fn id(&self) -> &str {
        "http-vlm"
    }

    fn classify(&self, req: &VlmRequest<'_>) -> Result<String, PortError> {
        let body = ClassifyBody {
            system: PROMPT_CLASSIFY,
            mask_id: req.mask.id,
            object_crop_png: png_b64(&req.crops.object.image),
            context_crop_png: png_b64(&req.crops.context.image),
            known_labels: req.known_labels,
        };
        let r: LabelReply = self.client.post_json("/classify", &body)?;
        Ok(r.label)
    }
}

pub struct HttpChat {
    client: HttpClient,
}

impl HttpChat {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

impl ChatPort for HttpChat {
    fn id(&self) -> &str {
        "http-llm"
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, PortError> {
        let r: TextReply = self.client.post_json("/chat", req)?;
        Ok(r.text)
    }
}

pub struct HttpBoost {
    client: HttpClient,
}

impl HttpBoost {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

impl BoostPort for HttpBoost {
    fn id(&self) -> &str {
        "http-boost"
    }

    fn boost(&self, prompt: &str, seed: u64) -> Result<String, PortError> {
        let body = serde_json::json!({"system": PROMPT_BOOST, "prompt": prompt, "seed": seed});
        let r: TextReply = self.client.post_json("/boost", &body)?;
        Ok(r.text)
    }
}

/// Remote label embedder; replies are normalized to unit length.
pub struct HttpEmbedder {
    client: HttpClient,
}

impl HttpEmbedder {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

#[derive(Deserialize)]
struct VectorReply {
    vector: Vec<f64>,
}

impl LabelEmbedder for HttpEmbedder {
    fn embed(&self, label: &str) -> Result<Vec<f64>, EmbedError> {
        if label.is_empty() {
            return Err(EmbedError::EmptyLabel);
        }
        let r: VectorReply = self
            .client
            .post_json("/embed", &serde_json::json!({ "label": label }))
            .map_err(|e| EmbedError::Backend(e.to_string()))?;
        let n = r.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r.vector.is_empty() || !n.is_finite() || n == 0.0 {
            return Err(EmbedError::Backend("degenerate embedding vector".into()));
        }
        Ok(r.vector.into_iter().map(|x| x / n).collect())
    }
}

pub struct HttpImage {
    client: HttpClient,
}

impl HttpImage {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

fn check_png(bytes: Vec<u8>) -> Result<Vec<u8>, PortError> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Ok(bytes)
    } else {
        Err(PortError::Malformed("reply is not a PNG".into()))
    }
}

impl ImagePort for HttpImage {
    fn id(&self) -> &str {
        "http-image"
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, PortError> {
        let body = serde_json::json!({"prompt": prompt, "seed": seed});
        check_png(self.client.post_json_for_bytes("/image", &body)?)
    }
}

pub struct HttpBgRemoval {
    client: HttpClient,
}

impl HttpBgRemoval {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

impl BgRemovalPort for HttpBgRemoval {
    fn id(&self) -> &str {
        "http-bg"
    }

    fn remove_background(&self, png: &[u8]) -> Result<Vec<u8>, PortError> {
        check_png(self.client.post_bytes("/remove-background", "image/png", png)?)
    }
}

pub struct HttpMesher {
    client: HttpClient,
}

impl HttpMesher {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(base, timeout),
        }
    }
}

fn percent_encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

/// Splits a mesher zip into its first `.obj` and the remaining files.
pub fn unpack_mesh_bundle(zip_bytes: &[u8]) -> Result<MeshBundle, PortError> {
    let bad = |e: zip::result::ZipError| PortError::Malformed(format!("mesh bundle: {e}"));
    let mut archive = zip::ZipArchive::new(Cursor::new(zip_bytes)).map_err(bad)?;
    let mut bundle = MeshBundle::default();
    let mut found = false;
    for i in 0..archive.len() {
        let mut f = archive.by_index(i).map_err(bad)?;
        if f.is_dir() {
            continue;
        }
        let name = f.name().map_err(bad)?.to_string();
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)
            .map_err(|e| PortError::Malformed(format!("mesh bundle entry {name}: {e}")))?;
        if !found && name.to_lowercase().ends_with(".obj") {
            bundle.obj = bytes;
            found = true;
        } else {
            bundle.extras.push((name, bytes));
        }
    }
    if !found {
        return Err(PortError::Malformed("mesh bundle has no .obj".into()));
    }
    Ok(bundle)
}

impl MesherPort for HttpMesher {
    fn id(&self) -> &str {
        "http-mesher"
    }

    fn mesh(&self, png: &[u8], prompt: &str, seed: u64) -> Result<MeshBundle, PortError> {
        let path = format!("/mesh?prompt={}&seed={seed}", percent_encode(prompt));
        unpack_mesh_bundle(&self.client.post_bytes(&path, "image/png", png)?)
    }
}


#[cfg(test)]
mod tests {
    use super::test_server::serve;
    use super::*;
    use crate::assets::{parse_obj, MockImage};
    use std::io::Write;

    const T: Duration = Duration::from_secs(5);

    #[test]
    fn embedder_normalizes_and_rejects_degenerate() {
        let (url, seen) = serve(2, |_, body| {
            let v: serde_json::Value = serde_json::from_slice(body).unwrap();
            let out = if v["label"] == "tree" { r#"{"vector":[3,4]}"# } else { r#"{"vector":[0,0]}"# };
            (200, "application/json", out.as_bytes().to_vec())
        });
        let e = HttpEmbedder::new(&url, T);
        assert_eq!(e.embed("tree").unwrap(), vec![0.6, 0.8]);
        assert!(matches!(e.embed("rock"), Err(EmbedError::Backend(_))));
        assert_eq!(seen.lock().unwrap()[0].path, "/embed");
    }

    #[test]
    fn mesher_sends_prompt_and_unpacks_zip() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        let (url, seen) = serve(1, move |_, _| {
            let mut buf = Cursor::new(Vec::new());
            let mut w = zip::ZipWriter::new(&mut buf);
            let opts = zip::write::SimpleFileOptions::default();
            w.start_file("model.mtl", opts).unwrap();
            w.write_all(b"newmtl m\n").unwrap();
            w.start_file("model.obj", opts).unwrap();
            w.write_all(obj.as_bytes()).unwrap();
            w.finish().unwrap();
            (200, "application/zip", buf.into_inner())
        });
        let png = MockImage::default().generate("x", 0).unwrap();
        let b = HttpMesher::new(&url, T).mesh(&png, "a red cube & more", 2).unwrap();
        assert_eq!(parse_obj(std::str::from_utf8(&b.obj).unwrap()).unwrap().faces.len(), 1);
        assert_eq!(b.extras[0].0, "model.mtl");
        let s = seen.lock().unwrap();
        assert_eq!(s[0].path, "/mesh?prompt=a%20red%20cube%20%26%20more&seed=2");
        assert_eq!(s[0].body, png);
    }

    #[test]
    fn image_ports_validate_png_and_map_outages() {
        let png = MockImage::default().generate("x", 0).unwrap();
        let p2 = png.clone();
        let (url, _) = serve(3, move |path, _| match path {
            "/image" => (200, "image/png", p2.clone()),
            "/remove-background" => (200, "image/png", b"GIF89a".to_vec()),
            _ => (503, "text/plain", b"down".to_vec()),
        });
        assert_eq!(HttpImage::new(&url, T).generate("p", 1).unwrap(), png);
        assert!(matches!(HttpBgRemoval::new(&url, T).remove_background(&png), Err(PortError::Malformed(_))));
        assert!(matches!(HttpBoost::new(&url, T).boost("p", 0), Err(PortError::Unavailable(_))));
    }

    #[test]
    fn bundle_without_obj_is_malformed() {
        let mut buf = Cursor::new(Vec::new());
        let mut w = zip::ZipWriter::new(&mut buf);
        w.start_file("a.png", zip::write::SimpleFileOptions::default()).unwrap();
        w.write_all(b"x").unwrap();
        w.finish().unwrap();
        assert!(unpack_mesh_bundle(&buf.into_inner()).is_err());
        assert!(unpack_mesh_bundle(b"not a zip").is_err());
    }

    #[test]
    fn chat_round_trip() {
        let (url, seen) = serve(1, |_, _| (200, "application/json", br#"{"text":"hello"}"#.to_vec()));
        let req = ChatRequest {
            system: "s".into(),
            scene: Default::default(),
            command: "c".into(),
            seed: 4,
            assets: vec![],
            history: vec![],
            anchor: None,
        };
        assert_eq!(HttpChat::new(&url, T).complete(&req).unwrap(), "hello");
        let body: ChatRequest = serde_json::from_slice(&seen.lock().unwrap()[0].body).unwrap();
        assert_eq!(body, req);
    }
}
