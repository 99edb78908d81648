use serde::{Deserialize, Serialize};

use super::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkColumn {
    pub column: String,
    pub metric_label: String,
}

/// Column names of the per-model metadata a snapshot must carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaColumns {
    pub model: String,
    pub params: String,
    pub training_type: String,
    pub architecture: String,
}

impl Default for MetaColumns {
    fn default() -> Self {
        Self {
            model: "model".into(),
            params: "params_b".into(),
            training_type: "type".into(),
            architecture: "architecture".into(),
        }
    }
}

impl MetaColumns {
    pub fn names(&self) -> [&str; 4] {
        [&self.model, &self.params, &self.training_type, &self.architecture]
    }
}

/// Ordered benchmark columns plus the metadata columns a snapshot must provide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSchema {
    pub benchmarks: Vec<BenchmarkColumn>,
    #[serde(default)]
    pub required_meta: MetaColumns,
}

impl BenchmarkSchema {
    pub fn new(benchmarks: Vec<BenchmarkColumn>, required_meta: MetaColumns) -> Result<Self> {
        let schema = Self { benchmarks, required_meta };
        schema.validate()?;
        Ok(schema)
    }

    /// The six leaderboard benchmarks with their few-shot settings.
    pub fn default_six() -> Self {
        let cols = [
            ("ARC", "accuracy, 25-shot"),
            ("HellaSwag", "accuracy, 10-shot"),
            ("MMLU", "accuracy, 5-shot"),
            ("TruthfulQA", "mc2, 0-shot"),
            ("Winogrande", "accuracy, 5-shot"),
            ("GSM8K", "accuracy, 5-shot"),
        ];
        Self::from_pairs(&cols)
    }

    /// Five-benchmark layout of the supplementary 65-model dataset.
    pub fn appendix_d() -> Self {
        let cols = [
            ("Lambada", "accuracy"),
            ("HellaSwag", "accuracy"),
            ("Winogrande", "accuracy"),
            ("Piqa", "accuracy"),
            ("Coqa", "F1"),
        ];
        Self::from_pairs(&cols)
    }

    fn from_pairs(cols: &[(&str, &str)]) -> Self {
        Self {
            benchmarks: cols
                .iter()
                .map(|(c, m)| BenchmarkColumn { column: (*c).into(), metric_label: (*m).into() })
                .collect(),
            required_meta: MetaColumns::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self =
            serde_json::from_str(text).map_err(|e| DataError::InvalidSchema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.benchmarks.len() < 2 {
            return Err(DataError::InvalidSchema(format!(
                "need at least 2 benchmark columns, got {}",
                self.benchmarks.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        let meta = self.required_meta.names();
        for name in self.benchmarks.iter().map(|b| b.column.as_str()).chain(meta) {
            if name.trim().is_empty() {
                return Err(DataError::InvalidSchema("empty column name".into()));
            }
            if !seen.insert(name) {
                return Err(DataError::InvalidSchema(format!("duplicate column `{name}`")));
            }
        }
        Ok(())
    }

    pub fn benchmark_names(&self) -> Vec<&str> {
        self.benchmarks.iter().map(|b| b.column.as_str()).collect()
    }
}
