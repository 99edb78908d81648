//! Tables built from plain columns for model tests.

use std::collections::BTreeMap;

use leaderlens_core::data::{AnalysisTable, ArchCategory, BenchmarkSchema, Column, ModelRecord, TrainingType};

pub fn blank_records(n: usize) -> Vec<ModelRecord> {
    (0..n)
        .map(|i| ModelRecord {
            name: format!("m{i}"),
            params_b: 1.0,
            training_type: TrainingType::Pretrained,
            architecture_raw: "LlamaForCausalLM".into(),
            arch_category: ArchCategory::Llama,
            scores: BTreeMap::new(),
            precision: None,
            license: None,
        })
        .collect()
}

pub struct TableBuilder {
    table: AnalysisTable,
}

impl TableBuilder {
    pub fn new(n: usize) -> Self {
        let table = AnalysisTable::from_records(blank_records(n), BenchmarkSchema::default_six()).unwrap();
        Self { table }
    }

    pub fn num(mut self, name: &str, values: &[f64]) -> Self {
        let col = Column::Numeric(values.iter().map(|v| Some(*v)).collect());
        self.table.add_column(name, col).unwrap();
        self
    }

    pub fn num_opt(mut self, name: &str, values: Vec<Option<f64>>) -> Self {
        self.table.add_column(name, Column::Numeric(values)).unwrap();
        self
    }

    pub fn fac(mut self, name: &str, values: &[String]) -> Self {
        let col = Column::Categorical(values.iter().map(|v| Some(v.clone())).collect());
        self.table.add_column(name, col).unwrap();
        self
    }

    pub fn build(self) -> AnalysisTable {
        self.table
    }
}
