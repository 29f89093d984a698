//! Model parameters as a directory of tensor fixtures, one per stored tensor.

use std::fs;
use std::path::Path;

use slowfast_core::decoder::{BranchParam, HostParam, Model, ParamId, StandaloneParam};

use crate::fixture::{self, Precision};
use crate::CliError;

pub fn param_name(id: ParamId) -> String {
    use StandaloneParam as S;
    match id {
        ParamId::Host(i, p) => {
            let n = match p {
                HostParam::InputNorm => "input_norm",
                HostParam::Wq => "wq",
                HostParam::Wk => "wk",
                HostParam::Wv => "wv",
                HostParam::Wo => "wo",
                HostParam::PostNorm => "post_norm",
                HostParam::FfnGate => "ffn_gate",
                HostParam::FfnUp => "ffn_up",
                HostParam::FfnDown => "ffn_down",
            };
            format!("layer{i}.{n}")
        }
        ParamId::Branch(i, p) => {
            let n = match p {
                BranchParam::Wk => "wk",
                BranchParam::Wv => "wv",
                BranchParam::GateW => "gate_w",
                BranchParam::GateB => "gate_b",
                BranchParam::Warmup => "warmup",
            };
            format!("layer{i}.xattn.{n}")
        }
        ParamId::Standalone(i, p) => {
            let n = match p {
                S::Norm => "norm",
                S::Wq => "wq",
                S::Wk => "wk",
                S::Wv => "wv",
                S::Wo => "wo",
                S::GateW => "gate_w",
                S::GateB => "gate_b",
                S::Warmup => "warmup",
                S::FfnNorm => "ffn_norm",
                S::FfnGate => "ffn_gate",
                S::FfnUp => "ffn_up",
                S::FfnDown => "ffn_down",
                S::FfnWarmup => "ffn_warmup",
            };
            format!("layer{i}.standalone.{n}")
        }
        ParamId::FinalNorm => "final_norm".into(),
    }
}

/// Ids that own storage; aliased projections are stored once, under the host.
fn stored_ids(model: &Model) -> Vec<ParamId> {
    model.param_ids().into_iter().filter(|&id| model.storage_of(id) == id).collect()
}

pub fn save_params(model: &Model, dir: &Path, precision: Precision) -> Result<usize, CliError> {
    fs::create_dir_all(dir)?;
    let ids = stored_ids(model);
    for &id in &ids {
        let t = model.param(id).expect("listed parameter exists");
        fixture::write(&dir.join(format!("{}.sftf", param_name(id))), t, precision)?;
    }
    fixture::write(&dir.join("lm_head.sftf"), &model.lm_head, precision)?;
    Ok(ids.len() + 1)
}

/// Overwrite every stored parameter of `model` from `dir`.
pub fn load_params(model: &mut Model, dir: &Path) -> Result<(), CliError> {
    for id in stored_ids(model) {
        let name = param_name(id);
        let t = fixture::read(&dir.join(format!("{name}.sftf")))?;
        let slot = model.param_mut(id).expect("listed parameter exists");
        if slot.shape() != t.shape() {
            return Err(CliError::Usage(format!("{name}: expected shape {:?}, file has {:?}", slot.shape(), t.shape())));
        }
        *slot = t;
    }
    let head = fixture::read(&dir.join("lm_head.sftf"))?;
    if head.shape() != model.lm_head.shape() {
        return Err(CliError::Usage(format!("lm_head: expected shape {:?}, file has {:?}", model.lm_head.shape(), head.shape())));
    }
    model.lm_head = head;
    Ok(())
}
