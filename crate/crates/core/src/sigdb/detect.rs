use serde::{Deserialize, Serialize};

use super::SignatureDb;
use crate::slicer::ResolvedValue;
use crate::smali::{AppIR, InstructionKind, MethodSignature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedArg {
    pub index: usize,
    pub value: ResolvedValue,
}

/// One invoke of a signature of interest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCallSite {
    pub app_id: String,
    pub callsite_id: String,
    /// `api_id` of the matched database entry.
    pub callee: String,
    pub caller: MethodSignature,
    pub caller_package: String,
    pub source_line: u32,
    /// Position of the invoke in the caller's instruction stream.
    pub instruction_index: usize,
    /// Register holding the receiver object, for instance invokes.
    #[serde(default)]
    pub receiver_register: Option<String>,
    /// Source line of the allocation the receiver traces back to, when unique.
    #[serde(default)]
    pub receiver_origin: Option<u32>,
    #[serde(default)]
    pub resolved_args: Vec<ResolvedArg>,
}

impl ApiCallSite {
    pub fn arg(&self, index: usize) -> Option<&ResolvedValue> {
        self.resolved_args.iter().find(|a| a.index == index).map(|a| &a.value)
    }
}

/// Exact-signature detection over every invoke in the app.
///
/// Output is ordered by (caller class, caller method, source line) and does
/// not depend on file discovery order.
pub fn find_call_sites(app: &AppIR, db: &SignatureDb) -> Vec<ApiCallSite> {
    let mut sites = Vec::new();
    for method in app.methods() {
        for (idx, ins) in method.instructions.iter().enumerate() {
            let InstructionKind::Invoke { kind, target, args } = &ins.kind else {
                continue;
            };
            let Some(entry) = db.lookup(target) else { continue };
            let caller = method.signature.clone();
            sites.push(ApiCallSite {
                app_id: app.app_id.clone(),
                callsite_id: format!("{}@{}", caller.to_smali_ref(), ins.source_line),
                callee: entry.api_id.clone(),
                caller_package: caller.package().to_string(),
                caller,
                source_line: ins.source_line,
                instruction_index: idx,
                receiver_register: kind
                    .has_receiver()
                    .then(|| args.first().map(|r| r.to_string()))
                    .flatten(),
                receiver_origin: None,
                resolved_args: Vec::new(),
            });
        }
    }
    sites.sort_by(|a, b| {
        (&a.caller, a.source_line).cmp(&(&b.caller, b.source_line))
    });
    sites
}
