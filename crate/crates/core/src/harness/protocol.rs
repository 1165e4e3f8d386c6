//! Client/server round trip with a stand-in language model.

use serde::Serialize;

use crate::embedding::{distance, mean_pool, tokenize, EmbeddingTable, Prompt, TokenId};
use crate::error::Result;
use crate::protection::{protect_prompt, ProtectedPrompt, ProtectionConfig};
use crate::rng::StreamKey;

use super::config::MockCompletion;

/// Prefix-lookup "LLM". The longest stored prompt that is a prefix of the
/// query wins; otherwise the stored prompt whose mean embedding is closest
/// to the query's answers. With no entries at all it echoes the query, so
/// every prompt gets a response.
#[derive(Debug, Clone, PartialEq)]
pub struct MockLLM {
    entries: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

impl MockLLM {
    pub fn new(entries: Vec<(Vec<TokenId>, Vec<TokenId>)>) -> Self {
        MockLLM { entries: entries.into_iter().filter(|(k, _)| !k.is_empty()).collect() }
    }

    pub fn from_completions(completions: &[MockCompletion], table: &EmbeddingTable) -> Result<Self> {
        let entries = completions
            .iter()
            .map(|c| {
                let p = tokenize(&c.prompt, table.vocab())?;
                let r = tokenize(&c.response, table.vocab())?;
                Ok((p.ids().to_vec(), r.ids().to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(entries))
    }

    pub fn respond(&self, prompt: &[TokenId], table: &EmbeddingTable) -> Vec<TokenId> {
        // longest matching prefix, first stored entry on ties
        let mut prefix: Option<&(Vec<TokenId>, Vec<TokenId>)> = None;
        for e in self.entries.iter().filter(|(k, _)| prompt.starts_with(k)) {
            if prefix.is_none_or(|p| e.0.len() > p.0.len()) {
                prefix = Some(e);
            }
        }
        if let Some((_, r)) = prefix {
            return r.clone();
        }
        if self.entries.is_empty() || prompt.is_empty() {
            return prompt.to_vec();
        }
        let pooled = |ids: &[TokenId]| mean_pool(ids.iter().map(|&i| table.row(i)), table.dim());
        let q = pooled(prompt);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, (k, _)) in self.entries.iter().enumerate() {
            let d = distance(pooled(k).coords(), q.coords());
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        self.entries[best].1.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ProtocolStep {
    /// ① the client writes d
    Design { prompt: Vec<TokenId> },
    /// ② the client randomizes d into d̃
    Protect { protected: Vec<TokenId>, noise_norms: Vec<f64>, unprotected_positions: Vec<usize> },
    /// ③ d̃ goes to the server
    Submit { protected: Vec<TokenId> },
    /// ④ the server answers r̃
    Respond { response: Vec<TokenId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub protected: ProtectedPrompt,
    pub response: Vec<TokenId>,
    pub steps: Vec<ProtocolStep>,
}

/// Protect `d`, submit it, and collect the mock server's response.
pub fn run_protocol(
    d: &Prompt,
    cfg: &ProtectionConfig,
    llm: &MockLLM,
    table: &EmbeddingTable,
    key: StreamKey,
) -> Result<ProtocolRun> {
    let mut steps = vec![ProtocolStep::Design { prompt: d.ids().to_vec() }];
    let protected = protect_prompt(d, cfg, table, key)?;
    steps.push(ProtocolStep::Protect {
        protected: protected.token_ids.clone(),
        noise_norms: protected.noise_draws.iter().map(|n| n.norm()).collect(),
        unprotected_positions: protected.unprotected_positions.clone(),
    });
    steps.push(ProtocolStep::Submit { protected: protected.token_ids.clone() });
    let response = llm.respond(&protected.token_ids, table);
    steps.push(ProtocolStep::Respond { response: response.clone() });
    Ok(ProtocolRun { protected, response, steps })
}
