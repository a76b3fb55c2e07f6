//! OpenAI-compatible HTTP backends.
//!
//! Generation roles go through `POST {endpoint}/chat/completions` with
//! `temperature = 0`; the verifier additionally asks for first-token
//! log-probabilities. Encoders use `POST {endpoint}/embeddings`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::Engine as _;
use log::{debug, warn};
use serde_json::{json, Value};

use super::prompts::{augmented_instruction, PromptTemplate};
use super::{
    Caption, CaptionEditor, Captioner, EditContext, ImageEditor, ImageEncoder, ImageHandle, Reflection,
    Refiner, Role, TextEncoder, Verifier, VerifierLogits,
};
use crate::error::{Error, Result};
use crate::types::Pathway;

/// Saturating logits used when the verifier only returns answer text.
pub const FALLBACK_LOGIT: f64 = 10.0;
const MAX_BACKOFF_MS: u64 = 8_000;
const BODY_LIMIT: u64 = 512 * 1024 * 1024;

/// Blocking JSON-over-HTTP client with bounded exponential-backoff retries.
pub struct ChatClient {
    role: Role,
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    agent: ureq::Agent,
    max_retries: u32,
    backoff_ms: u64,
    requests: AtomicU64,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl ChatClient {
    pub fn new(
        role: Role,
        endpoint: &str,
        model: Option<String>,
        api_key: Option<String>,
        timeout_ms: u64,
        max_retries: u32,
        backoff_ms: u64,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            role,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model,
            api_key,
            agent,
            max_retries,
            backoff_ms,
            requests: AtomicU64::new(0),
        }
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn attempt(&self, url: &str, body: &Value) -> std::result::Result<Value, Attempt> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {}", text.trim())));
        }
        resp.body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_json::<Value>()
            .map_err(|e| Attempt::Fatal(format!("malformed JSON body: {e}")))
    }

    /// Posts `body` to `{endpoint}/{path}`. At most `1 + max_retries` requests.
    pub fn post(&self, path: &str, mut body: Value) -> Result<Value> {
        if let (Some(model), Some(obj)) = (&self.model, body.as_object_mut()) {
            obj.entry("model").or_insert_with(|| json!(model));
        }
        let url = format!("{}/{}", self.endpoint, path.trim_start_matches('/'));
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                let wait = self.backoff_ms.saturating_mul(1 << (attempt - 1).min(16)).min(MAX_BACKOFF_MS);
                debug!("{} retry {attempt} after {wait} ms: {last}", self.role);
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(msg)) => {
                    return Err(Error::BackendUnavailable {
                        role: self.role.as_str(),
                        detail: msg,
                    })
                }
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(Error::BackendUnavailable {
            role: self.role.as_str(),
            detail: format!("{} attempts failed, last error: {last}", self.max_retries + 1),
        })
    }

    pub fn chat(&self, content: Vec<Value>, extra: Value) -> Result<Value> {
        let mut body = json!({
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        });
        if let (Some(obj), Value::Object(more)) = (body.as_object_mut(), extra) {
            obj.extend(more);
        }
        self.post("chat/completions", body)
    }
}

fn text_part(text: &str) -> Value {
    json!({"type": "text", "text": text})
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// URLs and data URLs pass through; anything else is read as a local file.
fn image_part(image: &ImageHandle) -> Result<Value> {
    let loc = image.locator.as_str();
    let url = if loc.starts_with("http://") || loc.starts_with("https://") || loc.starts_with("data:") {
        loc.to_string()
    } else {
        let path = Path::new(loc);
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        format!(
            "data:{};base64,{}",
            mime_for(path),
            base64::engine::general_purpose::STANDARD.encode(bytes)
        )
    };
    Ok(json!({"type": "image_url", "image_url": {"url": url}}))
}

fn first_message(resp: &Value) -> Option<&Value> {
    resp.get("choices")?.get(0)?.get("message")
}

/// Plain text of the first choice, joining text parts when content is an array.
fn message_text(resp: &Value) -> Option<String> {
    match first_message(resp)?.get("content")? {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

fn find_image_url(resp: &Value) -> Option<String> {
    let msg = first_message(resp)?;
    let url_of = |v: &Value| {
        v.get("image_url")
            .and_then(|u| u.get("url").or(Some(u)))
            .and_then(Value::as_str)
            .map(str::to_string)
    };
    if let Some(images) = msg.get("images").and_then(Value::as_array) {
        if let Some(url) = images.iter().find_map(url_of) {
            return Some(url);
        }
    }
    match msg.get("content") {
        Some(Value::Array(parts)) => parts.iter().find_map(url_of),
        Some(Value::String(s)) if s.trim_start().starts_with("data:image/") => Some(s.trim().to_string()),
        _ => None,
    }
}

fn top_logprob_entries(resp: &Value) -> Option<Vec<(String, f64)>> {
    let first = resp
        .get("choices")?
        .get(0)?
        .get("logprobs")?
        .get("content")?
        .get(0)?;
    let mut out = Vec::new();
    if let (Some(tok), Some(lp)) = (first.get("token").and_then(Value::as_str), first.get("logprob").and_then(Value::as_f64)) {
        out.push((tok.to_string(), lp));
    }
    for e in first.get("top_logprobs").and_then(Value::as_array).into_iter().flatten() {
        if let (Some(tok), Some(lp)) = (e.get("token").and_then(Value::as_str), e.get("logprob").and_then(Value::as_f64)) {
            out.push((tok.to_string(), lp));
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Yes/no log-probabilities of the first generated token. A token missing from
/// the returned alternatives is bounded by the smallest listed log-probability.
fn logits_from_logprobs(resp: &Value) -> Result<VerifierLogits> {
    let entries = top_logprob_entries(resp).ok_or(Error::LogprobsMissing)?;
    let pick = |word: &str| {
        entries
            .iter()
            .filter(|(t, _)| t.trim().eq_ignore_ascii_case(word))
            .map(|(_, lp)| *lp)
            .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
    };
    let floor = entries.iter().map(|(_, lp)| *lp).fold(f64::INFINITY, f64::min);
    match (pick("yes"), pick("no")) {
        (None, None) => Err(Error::LogprobsMissing),
        (yes, no) => Ok(VerifierLogits::new(yes.unwrap_or(floor), no.unwrap_or(floor))),
    }
}

fn logits_from_text(resp: &Value) -> Result<VerifierLogits> {
    let text = message_text(resp).unwrap_or_default();
    let word: String = text
        .trim()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Ok(VerifierLogits::new(FALLBACK_LOGIT, -FALLBACK_LOGIT)),
        "no" => Ok(VerifierLogits::new(-FALLBACK_LOGIT, FALLBACK_LOGIT)),
        _ => Err(Error::VerifyUnparseable(text)),
    }
}

/// Logits from a chat-completions response, falling back to the answer text
/// when log-probabilities are absent.
pub fn parse_verifier_response(resp: &Value) -> Result<VerifierLogits> {
    match logits_from_logprobs(resp) {
        Err(Error::LogprobsMissing) => logits_from_text(resp),
        other => other,
    }
}

/// Parses `{"verdict": "satisfied"|"unmet", "suggestion": "..."}`, tolerating
/// surrounding prose or code fences.
pub fn parse_reflection(text: &str) -> Result<Reflection> {
    let (start, end) = match (text.find('{'), text.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(Error::UnparseableReflection("no JSON object in response".into())),
    };
    let v: Value = serde_json::from_str(&text[start..=end])
        .map_err(|e| Error::UnparseableReflection(format!("invalid JSON: {e}")))?;
    let verdict = v
        .get("verdict")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::UnparseableReflection("missing `verdict`".into()))?;
    let suggestion = v
        .get("suggestion")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty());
    match verdict.trim().to_ascii_lowercase().as_str() {
        "satisfied" => Ok(Reflection::Satisfied),
        "unmet" => suggestion
            .map(|s| Reflection::Suggest(s.to_string()))
            .ok_or_else(|| Error::UnparseableReflection("`suggestion` required when verdict is unmet".into())),
        other => Err(Error::UnparseableReflection(format!("unknown verdict {other:?}"))),
    }
}

fn embedding_from(resp: &Value, role: &'static str) -> Result<Vec<f32>> {
    let arr = resp
        .get("data")
        .and_then(|d| d.get(0))
        .and_then(|d| d.get("embedding"))
        .and_then(Value::as_array)
        .ok_or(Error::EmptyResponse { role })?;
    arr.iter()
        .map(|x| x.as_f64().map(|f| f as f32))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
        .ok_or(Error::EmptyResponse { role })
}

/// One HTTP-backed model role.
pub struct HttpBackend {
    client: ChatClient,
    template: PromptTemplate,
    i2i_template: Option<PromptTemplate>,
    artifact_dir: PathBuf,
    top_logprobs: u32,
}

impl HttpBackend {
    pub fn new(client: ChatClient, template: PromptTemplate) -> Self {
        Self {
            client,
            template,
            i2i_template: None,
            artifact_dir: PathBuf::from("artifacts"),
            top_logprobs: 5,
        }
    }

    /// Separate template used by the refiner for the I2I pathway.
    pub fn with_i2i_template(mut self, t: PromptTemplate) -> Self {
        self.i2i_template = Some(t);
        self
    }

    pub fn with_artifact_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.artifact_dir = dir.into();
        self
    }

    pub fn with_top_logprobs(mut self, n: u32) -> Self {
        self.top_logprobs = n.max(5);
        self
    }

    pub fn client(&self) -> &ChatClient {
        &self.client
    }

    fn text_reply(&self, content: Vec<Value>, role: &'static str) -> Result<String> {
        let resp = self.client.chat(content, json!({}))?;
        message_text(&resp)
            .filter(|t| !t.trim().is_empty())
            .ok_or(Error::EmptyResponse { role })
    }

    fn save_image(&self, url: &str, ctx: EditContext<'_>) -> Result<String> {
        let Some(rest) = url.strip_prefix("data:") else {
            return Ok(url.to_string());
        };
        let (meta, payload) = rest
            .split_once(',')
            .ok_or(Error::EmptyResponse { role: "editor_image" })?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(payload.trim())
            .map_err(|_| Error::EmptyResponse { role: "editor_image" })?;
        if bytes.is_empty() {
            return Err(Error::EmptyResponse { role: "editor_image" });
        }
        let ext = match meta.split(';').next().unwrap_or("") {
            "image/jpeg" => "jpg",
            "image/webp" => "webp",
            "image/gif" => "gif",
            _ => "png",
        };
        std::fs::create_dir_all(&self.artifact_dir).map_err(|e| Error::io(&self.artifact_dir, e))?;
        let stem: String = ctx
            .query_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = self.artifact_dir.join(format!("{stem}-iter{}.{ext}", ctx.iteration));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path.to_string_lossy().into_owned())
    }
}

impl Captioner for HttpBackend {
    fn caption(&self, image: &ImageHandle) -> Result<Caption> {
        let prompt = self.template.render(&[]);
        let text = self.text_reply(vec![text_part(&prompt), image_part(image)?], "captioner")?;
        Caption::new("captioner", text)
    }
}

impl CaptionEditor for HttpBackend {
    fn edit_caption(&self, c_ref: &Caption, t_mod: &str, suggestions: Option<&str>) -> Result<Caption> {
        let instruction = augmented_instruction(t_mod, suggestions);
        let prompt = self
            .template
            .render(&[("reference_caption", c_ref.as_str()), ("modification", &instruction)]);
        let text = self.text_reply(vec![text_part(&prompt)], "editor_text")?;
        Caption::new("editor_text", text)
    }
}

impl ImageEditor for HttpBackend {
    fn edit_image(
        &self,
        i_ref: &ImageHandle,
        t_mod: &str,
        suggestions: Option<&str>,
        ctx: EditContext<'_>,
    ) -> Result<ImageHandle> {
        let instruction = augmented_instruction(t_mod, suggestions);
        let prompt = self.template.render(&[("modification", &instruction)]);
        let resp = self
            .client
            .chat(vec![text_part(&prompt), image_part(i_ref)?], json!({"modalities": ["image", "text"]}))?;
        let url = find_image_url(&resp).ok_or(Error::EmptyResponse { role: "editor_image" })?;
        let locator = self.save_image(&url, ctx)?;
        ImageHandle::edited(locator, ctx.iteration)
    }
}

impl Verifier for HttpBackend {
    fn verify(&self, i_ref: &ImageHandle, t_mod: &str, candidate: &ImageHandle) -> Result<VerifierLogits> {
        let prompt = self
            .template
            .render(&[("modification", t_mod), ("candidate", &candidate.locator)]);
        let resp = self.client.chat(
            vec![text_part(&prompt), image_part(i_ref)?, image_part(candidate)?],
            json!({"logprobs": true, "top_logprobs": self.top_logprobs, "max_tokens": 1}),
        )?;
        let logits = parse_verifier_response(&resp);
        if logits.is_ok() && top_logprob_entries(&resp).is_none() {
            warn!("verifier returned no logprobs; using the text answer");
        }
        logits
    }
}

impl Refiner for HttpBackend {
    fn reflect(
        &self,
        c_ref: &Caption,
        t_mod: &str,
        pseudo_target_caption: &Caption,
        pathway: Pathway,
    ) -> Result<Reflection> {
        let template = match pathway {
            Pathway::I2I => self.i2i_template.as_ref().unwrap_or(&self.template),
            Pathway::T2I => &self.template,
        };
        let prompt = template.render(&[
            ("reference_caption", c_ref.as_str()),
            ("modification", t_mod),
            ("pseudo_target_caption", pseudo_target_caption.as_str()),
        ]);
        let text = self.text_reply(vec![text_part(&prompt)], "refiner")?;
        parse_reflection(&text)
    }
}

impl TextEncoder for HttpBackend {
    fn encode_text(&self, text: &Caption) -> Result<Vec<f32>> {
        let resp = self.client.post("embeddings", json!({"input": text.as_str()}))?;
        embedding_from(&resp, "encoder_text")
    }
}

impl ImageEncoder for HttpBackend {
    fn encode_image(&self, image: &ImageHandle) -> Result<Vec<f32>> {
        let part = image_part(image)?;
        let url = part["image_url"]["url"].clone();
        let resp = self.client.post("embeddings", json!({"input": url}))?;
        embedding_from(&resp, "encoder_image")
    }
}
