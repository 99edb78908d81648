pub mod anova;
pub mod data;
pub mod dist;
pub mod gamm;
pub mod pipeline;
pub mod quadrature;
pub mod synthetic;
pub mod tsne;
