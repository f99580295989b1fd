use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, ChatRole, Embedder, ProviderFault, Usage};

/// Adapter for OpenAI-compatible `/chat/completions` and `/embeddings` endpoints.
pub struct OpenAiCompatible {
    endpoint: String,
    model: String,
    embedding_model: Option<String>,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatible {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
    ) -> Result<Self, ProviderFault> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderFault::Rejected(format!("http client: {e}")))?;
        Ok(OpenAiCompatible {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            embedding_model: None,
            api_key: api_key.into(),
            client,
        })
    }

    pub fn with_embedding_model(mut self, model: impl Into<String>) -> Self {
        self.embedding_model = Some(model.into());
        self
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderFault> {
        let resp = self
            .client
            .post(format!("{}/{}", self.endpoint, path))
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| ProviderFault::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderFault::Auth(format!("HTTP {status}")));
        }
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderFault::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(ProviderFault::Rejected(format!("HTTP {status}: {text}")));
        }
        resp.json::<Value>()
            .map_err(|e| ProviderFault::Transport(format!("invalid response body: {e}")))
    }
}

/// Maps a request onto the chat-completions wire shape.
pub(crate) fn chat_body(model: &str, req: &ChatRequest) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = &req.system {
        messages.push(json!({"role": "system", "content": system}));
    }
    for m in &req.messages {
        let role = match m.role {
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        };
        messages.push(json!({"role": role, "content": m.text}));
    }
    json!({
        "model": model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

impl ChatProvider for OpenAiCompatible {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFault> {
        let v = self.post("chat/completions", &chat_body(&self.model, req))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        let usage = v.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(ChatResponse {
            text,
            model_id: v["model"].as_str().unwrap_or(&self.model).to_string(),
            usage,
        })
    }
}

impl Embedder for OpenAiCompatible {
    fn model_id(&self) -> &str {
        self.embedding_model.as_deref().unwrap_or(&self.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderFault> {
        let body = json!({"model": Embedder::model_id(self), "input": text});
        let v = self.post("embeddings", &body)?;
        v["data"][0]["embedding"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .ok_or_else(|| ProviderFault::Rejected("embedding missing from response".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    #[test]
    fn request_fields_map_onto_wire_shape() {
        let req = ChatRequest {
            system: Some("sys".into()),
            messages: vec![ChatMessage::user("q"), ChatMessage::assistant("a")],
            temperature: 0.3,
            max_tokens: 64,
            tag: "synthesis".into(),
        };
        let body = chat_body("gpt-4o", &req);
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][2]["role"], "assistant");
        assert_eq!(body["temperature"], 0.3);
        assert_eq!(body["max_tokens"], 64);
    }
}
