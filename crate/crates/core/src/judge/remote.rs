//! Remote chat-completion judge and generator.
//!
//! Speaks the common chat-completion JSON shape over HTTP:
//! request `{"model", "messages": [{"role", "content"}], "temperature"}`,
//! reply `{"choices": [{"message": {"content": ...}}]}`. Judging runs at
//! temperature 0. Transport failures retry with exponential backoff; an
//! unparseable reply earns one reformulation retry asking for a single
//! letter. Pairwise presentation order is randomized under seed and the
//! parsed outcome de-randomized, cancelling pure position bias; the flag
//! exists to switch this off.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::rating::Outcome;

use super::{
    generation_key, pair_key, relevance_key, DuelSide, Generator, JudgeError, JudgeVerdict,
    PairwiseJudge, PromptTemplateSet, RelevanceJudge, RelevanceVerdict, VerdictCache,
};

/// Environment variable holding the API key; overrides the configured one.
pub const API_KEY_ENV: &str = "JUDGE_API_KEY";

/// Transport-level endpoint configuration.
#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: String,
    pub model: String,
    /// Key from the config file; `JUDGE_API_KEY` overrides it.
    pub api_key: Option<String>,
    pub transport_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            transport_retries: 3,
            backoff_base_ms: 250,
            timeout_secs: 60,
            max_in_flight: 8,
        }
    }

    fn resolved_api_key(&self) -> Option<String> {
        std::env::var(API_KEY_ENV).ok().or_else(|| self.api_key.clone())
    }
}

/// Behavior knobs for remote pairwise judging.
#[derive(Debug, Clone)]
pub struct RemoteJudgeConfig {
    /// Judging temperature; 0 for determinism.
    pub temperature: f64,
    /// Randomize which response is shown first, then de-randomize the
    /// parsed outcome. Disable for strict replication of position order.
    pub randomize_order: bool,
    /// Accept a TIE answer from the judge.
    pub allow_tie: bool,
    pub rng_seed: u64,
}

impl Default for RemoteJudgeConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            randomize_order: true,
            allow_tie: false,
            rng_seed: 0,
        }
    }
}

/// Counting semaphore bounding concurrent HTTP calls.
#[derive(Debug)]
struct InFlight {
    state: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl InFlight {
    fn new(max: usize) -> Self {
        Self {
            state: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.max {
            in_flight = self.freed.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        InFlightGuard { limiter: self }
    }
}

struct InFlightGuard<'a> {
    limiter: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.limiter.state.lock().unwrap();
        *in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Blocking chat-completion client with bounded concurrency and retries.
pub struct RemoteClient {
    endpoint: RemoteEndpoint,
    agent: ureq::Agent,
    limiter: InFlight,
}

impl RemoteClient {
    pub fn new(endpoint: RemoteEndpoint) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        let limiter = InFlight::new(endpoint.max_in_flight);
        Self {
            endpoint,
            agent,
            limiter,
        }
    }

    pub fn endpoint(&self) -> &RemoteEndpoint {
        &self.endpoint
    }

    /// Send one user message and return the assistant's reply content.
    pub fn chat(&self, content: &str, temperature: f64) -> Result<String, JudgeError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": temperature,
        });
        let api_key = self.endpoint.resolved_api_key();

        let mut last_error = String::new();
        let attempts = self.endpoint.transport_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.endpoint.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(backoff.min(5_000)));
            }
            let _slot = self.limiter.acquire();
            let mut request = self.agent.post(&self.endpoint.url);
            if let Some(key) = &api_key {
                request = request.header("authorization", &format!("Bearer {key}"));
            }
            match request.send_json(&body) {
                Ok(mut response) => {
                    let text = response
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| JudgeError::ResponseShape(e.to_string()))?;
                    return extract_content(&text);
                }
                Err(ureq::Error::StatusCode(code)) if !is_retryable_status(code) => {
                    return Err(JudgeError::Transport {
                        attempts: attempt + 1,
                        message: format!("http status {code}"),
                    });
                }
                Err(err) => {
                    last_error = err.to_string();
                }
            }
        }
        Err(JudgeError::Transport {
            attempts,
            message: last_error,
        })
    }
}

fn is_retryable_status(code: u16) -> bool {
    code == 429 || (500..600).contains(&code)
}

fn extract_content(raw: &str) -> Result<String, JudgeError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| JudgeError::ResponseShape(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| JudgeError::ResponseShape(format!("no choices[0].message.content in {raw}")))
}

/// Which presented side the judge picked.
enum PresentedChoice {
    First,
    Second,
    Tie,
}

fn parse_choice(reply: &str, allow_tie: bool) -> Option<PresentedChoice> {
    let token: String = reply
        .split_whitespace()
        .next()?
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_uppercase();
    match token.as_str() {
        "A" => Some(PresentedChoice::First),
        "B" => Some(PresentedChoice::Second),
        "TIE" if allow_tie => Some(PresentedChoice::Tie),
        _ => None,
    }
}

fn parse_relevance(reply: &str) -> Option<u8> {
    let token: String = reply
        .split_whitespace()
        .next()?
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect();
    match token.as_str() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Remote pairwise and relevance judge with verdict caching.
pub struct RemoteJudge {
    client: Arc<RemoteClient>,
    templates: Arc<PromptTemplateSet>,
    cache: Arc<VerdictCache>,
    config: RemoteJudgeConfig,
    rng: ChaCha8Rng,
    name: String,
}

impl RemoteJudge {
    pub fn new(
        client: Arc<RemoteClient>,
        templates: Arc<PromptTemplateSet>,
        cache: Arc<VerdictCache>,
        config: RemoteJudgeConfig,
    ) -> Self {
        let name = format!("remote:{}", client.endpoint().model);
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Self {
            client,
            templates,
            cache,
            config,
            rng,
            name,
        }
    }

    fn chat_with_parse_retry<T>(
        &self,
        prompt: &str,
        reformulation: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(T, String), JudgeError> {
        let reply = self.client.chat(prompt, self.config.temperature)?;
        if let Some(parsed) = parse(&reply) {
            return Ok((parsed, reply));
        }
        let retry_prompt = format!("{prompt}\n\n{reformulation}");
        let reply = self.client.chat(&retry_prompt, self.config.temperature)?;
        if let Some(parsed) = parse(&reply) {
            return Ok((parsed, reply));
        }
        Err(JudgeError::UnparseableReply { reply })
    }
}

impl PairwiseJudge for RemoteJudge {
    fn judge_pair(
        &mut self,
        a: DuelSide<'_>,
        b: DuelSide<'_>,
        attribute: &str,
    ) -> Result<JudgeVerdict, JudgeError> {
        if a.id == b.id {
            return Err(JudgeError::SelfDuel(a.id.to_string()));
        }
        if a.text.is_empty() || b.text.is_empty() {
            return Err(JudgeError::EmptyDuelText);
        }
        let key = pair_key(self.templates.pairwise.id(), attribute, a.text, b.text);
        if let Some((outcome, raw_reply)) = self.cache.get_pair(&key) {
            return Ok(JudgeVerdict {
                outcome,
                raw_reply,
                cached: true,
            });
        }

        let swap = self.config.randomize_order && self.rng.random_bool(0.5);
        let (first, second) = if swap { (b, a) } else { (a, b) };
        let prompt = self.templates.pairwise.fill(&[
            ("attribute", attribute),
            ("response_a", first.text),
            ("response_b", second.text),
        ]);
        let reformulation = if self.config.allow_tie {
            "Answer with a single letter: A or B, or TIE."
        } else {
            "Answer with a single letter: A or B."
        };
        let allow_tie = self.config.allow_tie;
        let (choice, reply) =
            self.chat_with_parse_retry(&prompt, reformulation, |r| parse_choice(r, allow_tie))?;

        let outcome = match choice {
            PresentedChoice::Tie => Outcome::Tie,
            PresentedChoice::First => {
                if swap {
                    Outcome::BWins
                } else {
                    Outcome::AWins
                }
            }
            PresentedChoice::Second => {
                if swap {
                    Outcome::AWins
                } else {
                    Outcome::BWins
                }
            }
        };
        self.cache.put_pair(&key, outcome, &reply)?;
        Ok(JudgeVerdict {
            outcome,
            raw_reply: reply,
            cached: false,
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

impl RelevanceJudge for RemoteJudge {
    fn judge_relevance(
        &mut self,
        query: &str,
        response: &str,
    ) -> Result<RelevanceVerdict, JudgeError> {
        if query.is_empty() || response.is_empty() {
            return Err(JudgeError::EmptyRelevanceInput);
        }
        let key = relevance_key(self.templates.relevance.id(), query, response);
        if let Some((score, raw_reply)) = self.cache.get_relevance(&key) {
            return Ok(RelevanceVerdict {
                score,
                raw_reply,
                cached: true,
            });
        }
        let prompt = self
            .templates
            .relevance
            .fill(&[("query", query), ("response", response)]);
        let (score, reply) = self.chat_with_parse_retry(
            &prompt,
            "Answer with a single digit: 1 if relevant, 0 if not.",
            parse_relevance,
        )?;
        self.cache.put_relevance(&key, score, &reply)?;
        Ok(RelevanceVerdict {
            score,
            raw_reply: reply,
            cached: false,
        })
    }
}

/// Remote generation client; caches outputs by (template, query,
/// description).
pub struct RemoteGenerator {
    client: Arc<RemoteClient>,
    templates: Arc<PromptTemplateSet>,
    cache: Arc<VerdictCache>,
    pub temperature: f64,
    candidates: Option<Vec<String>>,
}

impl RemoteGenerator {
    pub fn new(
        client: Arc<RemoteClient>,
        templates: Arc<PromptTemplateSet>,
        cache: Arc<VerdictCache>,
        temperature: f64,
    ) -> Self {
        Self {
            client,
            templates,
            cache,
            temperature,
            candidates: None,
        }
    }

    pub fn with_candidates(mut self, candidates: Vec<String>) -> Self {
        self.candidates = Some(candidates);
        self
    }
}

impl Generator for RemoteGenerator {
    fn generate(&mut self, query: &str, degree_description: &str) -> Result<String, JudgeError> {
        if query.is_empty() {
            return Err(JudgeError::EmptyQuery);
        }
        if let Some(candidates) = &self.candidates {
            if !candidates.iter().any(|c| c == degree_description) {
                return Err(JudgeError::DescriptorNotInCandidates(
                    degree_description.to_string(),
                ));
            }
        }
        let key = generation_key(self.templates.generation.id(), query, degree_description);
        if let Some((text, _)) = self.cache.get_generation(&key) {
            return Ok(text);
        }
        let prompt = self.templates.generation.fill(&[
            ("query", query),
            ("degree_description", degree_description),
        ]);
        let reply = self.client.chat(&prompt, self.temperature)?;
        if reply.trim().is_empty() {
            return Err(JudgeError::EmptyGeneration);
        }
        self.cache.put_generation(&key, &reply, &reply)?;
        Ok(reply)
    }
}
