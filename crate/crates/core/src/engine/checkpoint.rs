//! Checkpoints: the serialized, resumable state of a process.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::attrs::canonical_json;
use crate::error::Result;
use crate::process::calcjob::CalcJobState;
use crate::process::workchain::WorkChainState;
use crate::store::Tx;

use super::state::ProcessState;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flavor", rename_all = "snake_case")]
pub enum CheckpointBody {
    WorkChain(WorkChainState),
    CalcJob(CalcJobState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub process_type: String,
    pub state: ProcessState,
    pub body: CheckpointBody,
}

impl Checkpoint {
    pub fn new(process_type: &str, state: ProcessState, body: CheckpointBody) -> Self {
        Checkpoint { format_version: CHECKPOINT_FORMAT, process_type: process_type.to_string(), state, body }
    }

    /// Canonical encoding: sorted keys, no insignificant whitespace.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(canonical_json(&serde_json::to_value(self)?).into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

pub(crate) fn save(tx: &Tx<'_>, uuid: Uuid, cp: &Checkpoint) -> Result<i64> {
    tx.save_checkpoint(uuid, &cp.to_bytes()?)
}

pub(crate) fn load(tx: &Tx<'_>, uuid: Uuid) -> Result<Option<Checkpoint>> {
    tx.try_load_checkpoint(uuid)?.map(|b| Checkpoint::from_bytes(&b)).transpose()
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::process::calcjob::Stage;
    use crate::process::outline::Frame;
    use crate::process::workchain::CtxValue;

    #[test]
    fn round_trip_and_golden_encoding() {
        let mut st = WorkChainState::default();
        st.ctx.insert("iteration".into(), CtxValue::Scalar(json!(2)));
        st.ctx.insert("current".into(), CtxValue::Node(Uuid::nil()));
        st.pc = vec![Frame { index: 1, branch: 0 }, Frame { index: 0, branch: 0 }];
        st.steps_done = 3;
        let cp = Checkpoint::new("core.workflows.fibonacci", ProcessState::Running, CheckpointBody::WorkChain(st));
        let bytes = cp.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), cp);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            concat!(
                r#"{"body":{"awaiting":[],"ctx":{"current":{"type":"node","value":"00000000-0000-0000-0000-000000000000"},"#,
                r#""iteration":{"type":"scalar","value":2}},"exit_code":null,"flavor":"work_chain","#,
                r#""pc":[{"branch":0,"index":1},{"branch":0,"index":0}],"steps_done":3},"#,
                r#""format_version":1,"process_type":"core.workflows.fibonacci","state":"running"}"#
            )
        );
        let job = Checkpoint::new(
            "core.arithmetic.add_job",
            ProcessState::Waiting,
            CheckpointBody::CalcJob(CalcJobState { stage: Stage::Update, job_id: Some("7".into()), failures: 2, cache_checked: true }),
        );
        assert_eq!(Checkpoint::from_bytes(&job.to_bytes().unwrap()).unwrap(), job);
    }
}
