use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Training regime reported for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainingType {
    #[serde(rename = "fine-tune")]
    FineTune,
    #[serde(rename = "instruction-tune")]
    InstructionTune,
    #[serde(rename = "pretrained")]
    Pretrained,
    #[serde(rename = "RL-tune")]
    RlTune,
    #[serde(rename = "unknown")]
    Unknown,
}

impl TrainingType {
    pub const ALL: [TrainingType; 5] = [
        TrainingType::FineTune,
        TrainingType::InstructionTune,
        TrainingType::Pretrained,
        TrainingType::RlTune,
        TrainingType::Unknown,
    ];

    /// Maps free-form leaderboard labels ("🔶 fine-tuned on ...", "instruction-tuned",
    /// "RL-tuned", "pretrained", "") onto the closed set. Unrecognized labels are `Unknown`.
    pub fn from_label(raw: &str) -> Self {
        let s = raw.trim().to_ascii_lowercase();
        if s.contains("instruction") {
            TrainingType::InstructionTune
        } else if s.contains("rl-tun") || s.contains("rlhf") || s.contains("rl tun") || s == "rl" {
            TrainingType::RlTune
        } else if s.contains("fine-tun") || s.contains("finetun") || s.contains("fine tun") {
            TrainingType::FineTune
        } else if s.contains("pretrain") || s.contains("pre-train") {
            TrainingType::Pretrained
        } else {
            TrainingType::Unknown
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrainingType::FineTune => "fine-tune",
            TrainingType::InstructionTune => "instruction-tune",
            TrainingType::Pretrained => "pretrained",
            TrainingType::RlTune => "RL-tune",
            TrainingType::Unknown => "unknown",
        }
    }
}

impl fmt::Display for TrainingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Architecture family a raw architecture string is grouped into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchCategory {
    Bloom,
    Falcon,
    #[serde(rename = "GLM")]
    Glm,
    #[serde(rename = "GPT2")]
    Gpt2,
    #[serde(rename = "GPTJ")]
    GptJ,
    #[serde(rename = "GPTNeo")]
    GptNeo,
    Llama,
    Mistral,
    #[serde(rename = "OPT")]
    Opt,
    Rwkv,
    Other,
}

impl ArchCategory {
    pub const ALL: [ArchCategory; 11] = [
        ArchCategory::Bloom,
        ArchCategory::Falcon,
        ArchCategory::Glm,
        ArchCategory::Gpt2,
        ArchCategory::GptJ,
        ArchCategory::GptNeo,
        ArchCategory::Llama,
        ArchCategory::Mistral,
        ArchCategory::Opt,
        ArchCategory::Rwkv,
        ArchCategory::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ArchCategory::Bloom => "Bloom",
            ArchCategory::Falcon => "Falcon",
            ArchCategory::Glm => "GLM",
            ArchCategory::Gpt2 => "GPT2",
            ArchCategory::GptJ => "GPTJ",
            ArchCategory::GptNeo => "GPTNeo",
            ArchCategory::Llama => "Llama",
            ArchCategory::Mistral => "Mistral",
            ArchCategory::Opt => "OPT",
            ArchCategory::Rwkv => "Rwkv",
            ArchCategory::Other => "Other",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim();
        Self::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for ArchCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One leaderboard row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    pub params_b: f64,
    pub training_type: TrainingType,
    pub architecture_raw: String,
    pub arch_category: ArchCategory,
    /// Benchmark column → score in [0, 100]; `None` marks a missing score.
    pub scores: BTreeMap<String, Option<f64>>,
    pub precision: Option<String>,
    pub license: Option<String>,
}

impl ModelRecord {
    pub fn score(&self, benchmark: &str) -> Option<f64> {
        self.scores.get(benchmark).copied().flatten()
    }
}
