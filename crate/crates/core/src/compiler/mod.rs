//! ReLU-to-attention compilation.

mod block;
mod budget;
mod network;
mod spec;

pub use block::{
    compile_block, compile_one_layer_matrix, compile_one_layer_vector, fuse_layers, theory_cs, BlockSummary,
    CompiledBlock, LAMBDA_CS_LIMIT,
};
pub use budget::{budget_multilayer, budget_one_layer, ErrorBudget};
pub use network::{
    certificate, compile_network, compile_network_with, tune_lambda, BudgetPolicy, CompileOptions, Compiled,
    Decomposition,
};
pub use spec::{absorb_bias, matrix_to_vec, vec_to_matrix, OneLayerSpec, Unit};
