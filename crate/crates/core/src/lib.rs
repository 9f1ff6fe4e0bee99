//! Core library for the SVD-truncation transfer-attack workbench.

pub mod attack;
pub mod cka;
pub mod container;
pub mod data;
pub mod models;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use attack::{AdversarialBatch, AttackConfig, AttackError, GradMode, Method, SvdHook, Transform};
pub use cka::{linear_cka, CkaReport, CkaRow};
pub use models::{ArchId, LayerGraph, ModelError, TrainConfig, TrainMetrics};
pub use spectral::SvdResult;
pub use tensor::{Element, Graph, NodeId, Tensor, TensorError};
