//! Intra-procedural backward slicing with constant propagation.
//!
//! Argument registers at a call site are traced back through reaching
//! definitions. A value is reported only when every reaching definition
//! denotes the same constant; everything else is `Unresolved` with a reason.

mod blocks;
mod purposes;

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use blocks::{BasicBlockIndex, Block, DefSite};
pub use purposes::{decode_purposes, render_purposes, DecodedPurposes, Purpose, PURPOSE_BITS};

use crate::sigdb::{ApiCallSite, ApiCategory, ApiSignature, ResolvedArg, SignatureDb, ValueDomain};
use crate::smali::{AppIR, InstructionKind, SmaliMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnresolvedReason {
    MultipleDefs,
    NonConstantDef,
    CrossMethod,
    UnsupportedOp,
    RegisterUndefined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(String),
    StrArray(Vec<String>),
    Unresolved(UnresolvedReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedValue {
    pub value: Value,
    /// Source lines of the definitions the value was derived from.
    pub provenance: Vec<u32>,
}

impl ResolvedValue {
    pub fn unresolved(reason: UnresolvedReason) -> Self {
        ResolvedValue { value: Value::Unresolved(reason), provenance: Vec::new() }
    }

    pub fn is_resolved(&self) -> bool {
        !matches!(self.value, Value::Unresolved(_))
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self.value {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self.value {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.value {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_str_array(&self) -> Option<&[String]> {
        match &self.value {
            Value::StrArray(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Raw {
    Int(i64),
    Str(String),
    StrArray(Vec<String>),
}

type Eval = Result<(Raw, BTreeSet<u32>), (UnresolvedReason, BTreeSet<u32>)>;

const MAX_ARRAY_LEN: i64 = 4096;

struct Evaluator<'a> {
    method: &'a SmaliMethod,
    bbi: &'a BasicBlockIndex,
    active: HashSet<(usize, u32)>,
}

impl<'a> Evaluator<'a> {
    fn line(&self, i: usize) -> u32 {
        self.method.instructions[i].source_line
    }

    /// Value of physical register `reg` just before instruction `at`.
    fn eval_reg(&mut self, at: usize, reg: u32) -> Eval {
        let defs = self.bbi.defs_before(self.method, at, reg);
        let lines: BTreeSet<u32> = defs
            .iter()
            .filter_map(|d| match d {
                DefSite::At(i) => Some(self.line(*i)),
                _ => None,
            })
            .collect();
        if defs.is_empty() {
            return Err((UnresolvedReason::RegisterUndefined, lines));
        }
        let mut results = defs.iter().map(|d| self.eval_def(*d, reg, at)).collect::<Vec<_>>();
        if results.len() == 1 {
            return results.pop().unwrap();
        }
        let mut joined: Option<(Raw, BTreeSet<u32>)> = None;
        for r in results {
            match r {
                Ok((raw, prov)) => match joined.as_mut() {
                    None => joined = Some((raw, prov)),
                    Some((j, jp)) if *j == raw => jp.extend(prov),
                    Some(_) => return Err((UnresolvedReason::MultipleDefs, lines)),
                },
                Err(_) => return Err((UnresolvedReason::MultipleDefs, lines)),
            }
        }
        Ok(joined.expect("at least two definitions"))
    }

    fn eval_def(&mut self, def: DefSite, reg: u32, use_at: usize) -> Eval {
        let i = match def {
            DefSite::Param => return Err((UnresolvedReason::CrossMethod, BTreeSet::new())),
            DefSite::Undefined => return Err((UnresolvedReason::RegisterUndefined, BTreeSet::new())),
            DefSite::Opaque => return Err((UnresolvedReason::NonConstantDef, BTreeSet::new())),
            DefSite::At(i) => i,
        };
        let line = BTreeSet::from([self.line(i)]);
        let method = self.method;
        let instr = &method.instructions[i];
        let low_half = |dst| method.physical(dst) == reg;
        match &instr.kind {
            InstructionKind::Const { value, .. } => Ok((Raw::Int(*value), line)),
            InstructionKind::ConstWide { dst, value } if low_half(*dst) => Ok((Raw::Int(*value), line)),
            InstructionKind::ConstString { value, .. } => Ok((Raw::Str(value.clone()), line)),
            InstructionKind::Move { dst, src, .. } => {
                if !self.active.insert((i, reg)) {
                    return Err((UnresolvedReason::MultipleDefs, line));
                }
                let offset = reg - method.physical(*dst);
                let r = self.eval_reg(i, method.physical(*src) + offset);
                self.active.remove(&(i, reg));
                r
            }
            InstructionKind::MoveResult { .. } => {
                let prev = i.checked_sub(1).map(|p| &method.instructions[p].kind);
                match prev {
                    Some(InstructionKind::FilledNewArray { elements, element_type }) => {
                        if element_type != "[Ljava/lang/String;" {
                            return Err((UnresolvedReason::UnsupportedOp, line));
                        }
                        let mut out = Vec::with_capacity(elements.len());
                        let mut prov = BTreeSet::new();
                        for e in elements {
                            match self.eval_reg(i - 1, method.physical(*e))? {
                                (Raw::Str(s), p) => {
                                    out.push(s);
                                    prov.extend(p);
                                }
                                (_, p) => return Err((UnresolvedReason::UnsupportedOp, p)),
                            }
                        }
                        Ok((Raw::StrArray(out), prov))
                    }
                    _ => Err((UnresolvedReason::CrossMethod, line)),
                }
            }
            InstructionKind::StaticGet { .. } | InstructionKind::NewInstance { .. } => {
                Err((UnresolvedReason::NonConstantDef, line))
            }
            InstructionKind::Other { opcode, operands } if opcode == "new-array" => {
                self.eval_new_array(i, operands, use_at)
            }
            InstructionKind::Other { opcode, .. }
                if opcode.starts_with("iget")
                    || opcode.starts_with("aget")
                    || opcode == "move-exception" =>
            {
                Err((UnresolvedReason::NonConstantDef, line))
            }
            _ => Err((UnresolvedReason::UnsupportedOp, line)),
        }
    }

    /// `new-array` followed by `aput-object` stores, all in the use's block.
    fn eval_new_array(&mut self, at: usize, operands: &[String], use_at: usize) -> Eval {
        let line = BTreeSet::from([self.line(at)]);
        let unsupported = |l: BTreeSet<u32>| Err((UnresolvedReason::UnsupportedOp, l));
        if operands.get(2).map(String::as_str) != Some("[Ljava/lang/String;")
            || at >= use_at
            || self.bbi.block_of(at) != self.bbi.block_of(use_at)
        {
            return unsupported(line);
        }
        let Some(size_reg) = operands.get(1).and_then(|o| crate::smali::Reg::parse(o)) else {
            return unsupported(line);
        };
        let (len, mut prov) = match self.eval_reg(at, self.method.physical(size_reg))? {
            (Raw::Int(n), p) if (0..=MAX_ARRAY_LEN).contains(&n) => (n as usize, p),
            (_, p) => return unsupported(p),
        };
        prov.extend(line.iter().copied());
        let mut slots: Vec<Option<String>> = vec![None; len];
        let array_def = BTreeSet::from([DefSite::At(at)]);
        for j in at + 1..use_at {
            let instr = &self.method.instructions[j];
            let touches: Vec<_> = instr
                .uses()
                .into_iter()
                .filter(|r| {
                    self.bbi
                        .defs_before(self.method, j, self.method.physical(*r))
                        .contains(&DefSite::At(at))
                })
                .collect();
            if touches.is_empty() {
                continue;
            }
            let InstructionKind::ArrayPut { value, array, index } = &instr.kind else {
                return unsupported(prov);
            };
            let arr = self.method.physical(*array);
            if touches.iter().any(|r| self.method.physical(*r) != arr)
                || self.bbi.defs_before(self.method, j, arr) != array_def
            {
                return unsupported(prov);
            }
            let k = match self.eval_reg(j, self.method.physical(*index))? {
                (Raw::Int(k), p) if k >= 0 && (k as usize) < len => {
                    prov.extend(p);
                    k as usize
                }
                (_, p) => return unsupported(p),
            };
            match self.eval_reg(j, self.method.physical(*value))? {
                (Raw::Str(s), p) => {
                    prov.extend(p);
                    slots[k] = Some(s);
                }
                (_, p) => return unsupported(p),
            }
        }
        match slots.into_iter().collect::<Option<Vec<_>>>() {
            Some(v) => Ok((Raw::StrArray(v), prov)),
            None => unsupported(prov),
        }
    }

    /// Allocation line a receiver traces back to through moves and builder chaining.
    fn receiver_origin(&mut self, at: usize, reg: u32, depth: usize) -> Option<u32> {
        if depth > 64 {
            return None;
        }
        let defs = self.bbi.defs_before(self.method, at, reg);
        let [DefSite::At(i)] = defs.into_iter().collect::<Vec<_>>()[..] else {
            return None;
        };
        let method = self.method;
        match &method.instructions[i].kind {
            InstructionKind::NewInstance { .. } => Some(method.instructions[i].source_line),
            InstructionKind::Move { src, .. } => self.receiver_origin(i, method.physical(*src), depth + 1),
            InstructionKind::MoveResult { .. } => {
                let InstructionKind::Invoke { kind, target, args } = &method.instructions.get(i.checked_sub(1)?)?.kind
                else {
                    return None;
                };
                let returns_self = crate::smali::class_to_descriptor(&target.class_name) == target.return_descriptor;
                if !kind.has_receiver() || !returns_self {
                    return None;
                }
                self.receiver_origin(i - 1, method.physical(*args.first()?), depth + 1)
            }
            _ => None,
        }
    }
}

fn coerce(raw: Raw, domain: ValueDomain) -> Result<Value, UnresolvedReason> {
    match (domain, raw) {
        (ValueDomain::Boolean, Raw::Int(0)) => Ok(Value::Bool(false)),
        (ValueDomain::Boolean, Raw::Int(1)) => Ok(Value::Bool(true)),
        (ValueDomain::Int, Raw::Int(i)) => Ok(Value::Int(i)),
        (ValueDomain::String, Raw::Str(s)) => Ok(Value::Str(s)),
        (ValueDomain::StringArray, Raw::StrArray(v)) => Ok(Value::StrArray(v)),
        (ValueDomain::None, Raw::Int(i)) => Ok(Value::Int(i)),
        (ValueDomain::None, Raw::Str(s)) => Ok(Value::Str(s)),
        (ValueDomain::None, Raw::StrArray(v)) => Ok(Value::StrArray(v)),
        _ => Err(UnresolvedReason::UnsupportedOp),
    }
}

/// Parameter indices recovered for a site: every argument for constructors
/// and provider factories, otherwise just the argument of interest.
pub fn indices_of_interest(entry: &ApiSignature) -> Vec<usize> {
    match entry.category {
        ApiCategory::KeystoreInit | ApiCategory::JavaProvider => {
            (0..entry.signature.param_descriptors.len()).collect()
        }
        _ => entry.arg_of_interest.into_iter().collect(),
    }
}

/// Fills `resolved_args` and `receiver_origin` of a call site from its containing method.
pub fn resolve_args(method: &SmaliMethod, site: &ApiCallSite, entry: &ApiSignature) -> ApiCallSite {
    let mut out = site.clone();
    out.resolved_args.clear();
    let indices = indices_of_interest(entry);
    let unresolved_all = |out: &mut ApiCallSite, reason| {
        out.resolved_args = indices
            .iter()
            .map(|&index| ResolvedArg { index, value: ResolvedValue::unresolved(reason) })
            .collect();
    };
    if site.caller != method.signature {
        unresolved_all(&mut out, UnresolvedReason::CrossMethod);
        return out;
    }
    let at = match method.instructions.get(site.instruction_index) {
        Some(i) if i.source_line == site.source_line => site.instruction_index,
        _ => match method.instructions.iter().position(|i| i.source_line == site.source_line) {
            Some(p) => p,
            None => {
                unresolved_all(&mut out, UnresolvedReason::UnsupportedOp);
                return out;
            }
        },
    };
    let InstructionKind::Invoke { kind, target, args } = &method.instructions[at].kind else {
        unresolved_all(&mut out, UnresolvedReason::UnsupportedOp);
        return out;
    };
    let bbi = BasicBlockIndex::build(method);
    let mut ev = Evaluator { method, bbi: &bbi, active: HashSet::new() };
    let receiver = usize::from(kind.has_receiver());
    for index in indices {
        let value = match target.param_register_offset(index).and_then(|o| args.get(receiver + o)) {
            None => ResolvedValue::unresolved(UnresolvedReason::UnsupportedOp),
            Some(reg) => {
                let domain = if Some(index) == entry.arg_of_interest {
                    entry.value_domain
                } else {
                    ValueDomain::from_descriptor(&target.param_descriptors[index])
                };
                match ev.eval_reg(at, method.physical(*reg)) {
                    Ok((raw, prov)) => match coerce(raw, domain) {
                        Ok(v) => ResolvedValue { value: v, provenance: prov.into_iter().collect() },
                        Err(reason) => ResolvedValue {
                            value: Value::Unresolved(reason),
                            provenance: prov.into_iter().collect(),
                        },
                    },
                    Err((reason, prov)) => ResolvedValue {
                        value: Value::Unresolved(reason),
                        provenance: prov.into_iter().collect(),
                    },
                }
            }
        };
        out.resolved_args.push(ResolvedArg { index, value });
    }
    out.receiver_origin = if kind.has_receiver() {
        args.first().and_then(|r| ev.receiver_origin(at, method.physical(*r), 0))
    } else {
        None
    };
    out
}

/// Resolves every site of an app in parallel; sites whose caller or callee
/// cannot be found are returned unchanged.
pub fn slice_app(app: &AppIR, sites: Vec<ApiCallSite>, db: &SignatureDb) -> Vec<ApiCallSite> {
    sites
        .into_par_iter()
        .map(|site| match (app.find_method(&site.caller), db.get(&site.callee)) {
            (Some(m), Some(e)) => resolve_args(m, &site, e),
            _ => site,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigdb::find_call_sites;
    use crate::smali::parse_smali_file;
    use std::collections::BTreeMap;

    const B: &str = "Landroid/security/keystore/KeyGenParameterSpec$Builder;";

    fn sliced(body: &str, params: &str) -> Vec<ApiCallSite> {
        let text = format!(
            ".class public Lcom/t/K;\n.super Ljava/lang/Object;\n.method public static f({params})V\n.registers 8\n{body}\nreturn-void\n.end method\n"
        );
        let class = parse_smali_file(&text.replace("$B", B)).unwrap();
        let app = AppIR {
            app_id: "t".into(),
            classes: BTreeMap::from([(class.name.clone(), class)]),
            file_count: 1,
            warnings: vec![],
        };
        let db = SignatureDb::builtin();
        let sites = find_call_sites(&app, &db);
        slice_app(&app, sites, &db)
    }

    fn arg(site: &ApiCallSite, i: usize) -> Value {
        site.arg(i).unwrap().value.clone()
    }

    #[test]
    fn single_const_bool() {
        let s = sliced(
            "new-instance v2, $B\nconst/4 v3, 0x0\ninvoke-virtual {v2, v3}, $B->setIsStrongBoxBacked(Z)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Bool(false));
        assert_eq!(s[0].arg(0).unwrap().provenance, vec![6]);
        assert_eq!(s[0].receiver_origin, Some(5));
    }

    #[test]
    fn init_purposes_and_alias() {
        let s = sliced(
            "new-instance v2, $B\nconst-string v0, \"mykey\"\nconst/4 v1, 0x3\nmove-object v4, v0\ninvoke-direct {v2, v4, v1}, $B-><init>(Ljava/lang/String;I)V",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Str("mykey".into()));
        assert_eq!(arg(&s[0], 1), Value::Int(3));
    }

    #[test]
    fn branch_join_with_different_constants() {
        let s = sliced(
            "new-instance v2, $B\nif-eqz p0, :cond_0\nconst/4 v3, 0x0\ngoto :goto_0\n:cond_0\nconst/4 v3, 0x1\n:goto_0\ninvoke-virtual {v2, v3}, $B->setIsStrongBoxBacked(Z)$B",
            "I",
        );
        assert_eq!(arg(&s[0], 0), Value::Unresolved(UnresolvedReason::MultipleDefs));
    }

    #[test]
    fn branch_join_with_agreeing_constants() {
        let s = sliced(
            "new-instance v2, $B\nif-eqz p0, :cond_0\nconst/4 v3, 0x1\ngoto :goto_0\n:cond_0\nconst/4 v3, 0x1\n:goto_0\ninvoke-virtual {v2, v3}, $B->setIsStrongBoxBacked(Z)$B",
            "I",
        );
        assert_eq!(arg(&s[0], 0), Value::Bool(true));
        assert_eq!(s[0].arg(0).unwrap().provenance.len(), 2);
    }

    #[test]
    fn move_chain_of_three() {
        let s = sliced(
            "new-instance v2, $B\nconst/16 v3, 0x100\nmove v4, v3\nmove v5, v4\nmove v6, v5\ninvoke-virtual {v2, v6}, $B->setKeySize(I)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Int(256));
    }

    #[test]
    fn parameter_and_field_are_unresolved() {
        let s = sliced(
            "new-instance v2, $B\ninvoke-virtual {v2, p0}, $B->setIsStrongBoxBacked(Z)$B\nsget-boolean v3, Lcom/t/K;->F:Z\ninvoke-virtual {v2, v3}, $B->setUserAuthenticationRequired(Z)$B",
            "Z",
        );
        assert_eq!(arg(&s[0], 0), Value::Unresolved(UnresolvedReason::CrossMethod));
        assert_eq!(arg(&s[1], 0), Value::Unresolved(UnresolvedReason::NonConstantDef));
    }

    #[test]
    fn helper_result_is_cross_method() {
        let s = sliced(
            "new-instance v2, $B\ninvoke-static {}, Lcom/t/K;->size()I\nmove-result v3\ninvoke-virtual {v2, v3}, $B->setKeySize(I)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Unresolved(UnresolvedReason::CrossMethod));
    }

    #[test]
    fn non_boolean_literal_in_boolean_slot() {
        let s = sliced(
            "new-instance v2, $B\nconst/4 v3, 0x2\ninvoke-virtual {v2, v3}, $B->setIsStrongBoxBacked(Z)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Unresolved(UnresolvedReason::UnsupportedOp));
    }

    #[test]
    fn filled_new_array_of_strings() {
        let s = sliced(
            "new-instance v2, $B\nconst-string v3, \"GCM\"\nconst-string v4, \"CBC\"\nfilled-new-array {v3, v4}, [Ljava/lang/String;\nmove-result-object v5\ninvoke-virtual {v2, v5}, $B->setBlockModes([Ljava/lang/String;)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::StrArray(vec!["GCM".into(), "CBC".into()]));
    }

    #[test]
    fn new_array_with_element_stores() {
        let s = sliced(
            "new-instance v2, $B\nconst/4 v3, 0x1\nnew-array v3, v3, [Ljava/lang/String;\nconst/4 v4, 0x0\nconst-string v5, \"NoPadding\"\naput-object v5, v3, v4\ninvoke-virtual {v2, v3}, $B->setEncryptionPaddings([Ljava/lang/String;)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::StrArray(vec!["NoPadding".into()]));
    }

    #[test]
    fn new_array_with_missing_slot_or_escape() {
        let s = sliced(
            "new-instance v2, $B\nconst/4 v3, 0x2\nnew-array v3, v3, [Ljava/lang/String;\nconst/4 v4, 0x0\nconst-string v5, \"GCM\"\naput-object v5, v3, v4\ninvoke-virtual {v2, v3}, $B->setBlockModes([Ljava/lang/String;)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Unresolved(UnresolvedReason::UnsupportedOp));
        let s = sliced(
            "new-instance v2, $B\nconst/4 v3, 0x1\nnew-array v3, v3, [Ljava/lang/String;\nconst/4 v4, 0x0\nconst-string v5, \"GCM\"\naput-object v5, v3, v4\ninvoke-static {v3}, Lcom/t/K;->mutate([Ljava/lang/String;)V\ninvoke-virtual {v2, v3}, $B->setBlockModes([Ljava/lang/String;)$B",
            "",
        );
        assert_eq!(arg(&s[0], 0), Value::Unresolved(UnresolvedReason::UnsupportedOp));
    }

    #[test]
    fn opaque_handler_entry_is_not_resolved() {
        let s = sliced(
            "new-instance v2, $B\nconst/4 v3, 0x1\n:try_start_0\ninvoke-static {}, Lcom/t/K;->g()V\n:try_end_0\n.catch Ljava/lang/Exception; {:try_start_0 .. :try_end_0} :catch_0\nconst/4 v3, 0x0\n:catch_0\ninvoke-virtual {v2, v3}, $B->setIsStrongBoxBacked(Z)$B",
            "",
        );
        assert!(matches!(arg(&s[0], 0), Value::Unresolved(_)));
    }

    #[test]
    fn receiver_followed_through_builder_chain() {
        let s = sliced(
            "new-instance v2, $B\nconst-string v0, \"k\"\nconst/4 v1, 0x3\ninvoke-direct {v2, v0, v1}, $B-><init>(Ljava/lang/String;I)V\nconst/4 v3, 0x1\ninvoke-virtual {v2, v3}, $B->setIsStrongBoxBacked(Z)$B\nmove-result-object v2\nconst/16 v3, 0x100\ninvoke-virtual {v2, v3}, $B->setKeySize(I)$B",
            "",
        );
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.receiver_origin == Some(5)));
    }
}
