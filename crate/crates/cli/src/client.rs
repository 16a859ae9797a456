//! Client verbs: thin 1:1 wrappers over the REST endpoints.
//!
//! HTTP error statuses map to exit codes (404 -> 4, 409 -> 9, 422 -> 22);
//! transport failures exit 1.

use std::process::ExitCode;

use anyhow::{Context, Result};

pub struct Client {
    agent: ureq::Agent,
    server: String,
}

pub enum Outcome {
    Ok(String),
    HttpError { status: u16, body: String },
}

impl Outcome {
    /// Prints the response and converts it to a process exit code.
    pub fn finish(self) -> ExitCode {
        match self {
            Outcome::Ok(body) => {
                println!("{body}");
                ExitCode::SUCCESS
            }
            Outcome::HttpError { status, body } => {
                eprintln!("{body}");
                ExitCode::from(match status {
                    404 => 4,
                    409 => 9,
                    422 => 22,
                    _ => 1,
                })
            }
        }
    }
}

fn pretty(text: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(text) {
        Ok(value) => serde_json::to_string_pretty(&value).unwrap_or_else(|_| text.to_string()),
        Err(_) => text.to_string(),
    }
}

impl Client {
    pub fn new(server: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build();
        Client {
            agent: config.into(),
            server: server.trim_end_matches('/').to_string(),
        }
    }

    fn read(mut response: ureq::http::Response<ureq::Body>) -> Result<Outcome> {
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .context("read response body")?;
        if (200..300).contains(&status) {
            Ok(Outcome::Ok(pretty(&body)))
        } else {
            Ok(Outcome::HttpError {
                status,
                body: pretty(&body),
            })
        }
    }

    pub fn get(&self, path: &str) -> Result<Outcome> {
        let response = self
            .agent
            .get(format!("{}{path}", self.server))
            .call()
            .with_context(|| format!("GET {}{path} failed; is the server running?", self.server))?;
        Self::read(response)
    }

    pub fn post(&self, path: &str, body: &str) -> Result<Outcome> {
        let response = self
            .agent
            .post(format!("{}{path}", self.server))
            .header("content-type", "application/json")
            .send(body)
            .with_context(|| format!("POST {}{path} failed; is the server running?", self.server))?;
        Self::read(response)
    }

    pub fn delete(&self, path: &str) -> Result<Outcome> {
        let response = self
            .agent
            .delete(format!("{}{path}", self.server))
            .call()
            .with_context(|| {
                format!("DELETE {}{path} failed; is the server running?", self.server)
            })?;
        Self::read(response)
    }
}
