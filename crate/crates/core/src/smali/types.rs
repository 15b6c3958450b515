use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SmaliError;

/// Fully-qualified method identity, normalized from smali `Lpkg/Cls;->name(..)R` form.
///
/// `class_name` uses dotted form (`com.example.Foo`); descriptors are kept in
/// their smali token form (`Ljava/lang/String;`, `I`, `[B`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MethodSignature {
    pub class_name: String,
    pub method_name: String,
    pub param_descriptors: Vec<String>,
    pub return_descriptor: String,
}

impl MethodSignature {
    pub fn new(
        class_name: impl Into<String>,
        method_name: impl Into<String>,
        params: &[&str],
        ret: impl Into<String>,
    ) -> Self {
        MethodSignature {
            class_name: class_name.into(),
            method_name: method_name.into(),
            param_descriptors: params.iter().map(|s| s.to_string()).collect(),
            return_descriptor: ret.into(),
        }
    }

    /// Parses `Lcom/example/Foo;->bar(Ljava/lang/String;I)V`.
    pub fn parse_smali_ref(text: &str) -> Result<Self, String> {
        let (owner, rest) = text
            .split_once("->")
            .ok_or_else(|| format!("missing '->' in method reference `{text}`"))?;
        let class_name = class_from_descriptor(owner)?;
        let open = rest
            .find('(')
            .ok_or_else(|| format!("missing '(' in method reference `{text}`"))?;
        let close = rest
            .find(')')
            .ok_or_else(|| format!("missing ')' in method reference `{text}`"))?;
        if close < open {
            return Err(format!("malformed descriptor in `{text}`"));
        }
        let method_name = &rest[..open];
        if method_name.is_empty() {
            return Err(format!("empty method name in `{text}`"));
        }
        let params = split_descriptors(&rest[open + 1..close])?;
        let ret = &rest[close + 1..];
        let ret_tokens = split_descriptors(ret)?;
        if ret_tokens.len() != 1 {
            return Err(format!("bad return descriptor `{ret}`"));
        }
        Ok(MethodSignature {
            class_name,
            method_name: method_name.to_string(),
            param_descriptors: params,
            return_descriptor: ret_tokens.into_iter().next().unwrap(),
        })
    }

    /// Renders back to the smali reference form accepted by [`parse_smali_ref`](Self::parse_smali_ref).
    pub fn to_smali_ref(&self) -> String {
        format!(
            "{}->{}({}){}",
            class_to_descriptor(&self.class_name),
            self.method_name,
            self.param_descriptors.concat(),
            self.return_descriptor
        )
    }

    /// Number of argument registers consumed by the declared parameters (wide types take two).
    pub fn param_register_width(&self) -> usize {
        self.param_descriptors.iter().map(|d| descriptor_width(d)).sum()
    }

    /// Register slot (0-based, excluding receiver) at which parameter `index` starts.
    pub fn param_register_offset(&self, index: usize) -> Option<usize> {
        if index >= self.param_descriptors.len() {
            return None;
        }
        Some(
            self.param_descriptors[..index]
                .iter()
                .map(|d| descriptor_width(d))
                .sum(),
        )
    }

    /// Package of the declaring class: the class name minus its last component.
    pub fn package(&self) -> &str {
        package_of(&self.class_name)
    }
}

impl fmt::Display for MethodSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_smali_ref())
    }
}

/// `com.example.Foo` -> `com.example`; top-level classes have an empty package.
pub fn package_of(class_name: &str) -> &str {
    class_name.rsplit_once('.').map(|(p, _)| p).unwrap_or("")
}

/// `Lcom/example/Foo;` -> `com.example.Foo`. Array owners keep their `[` prefix.
pub fn class_from_descriptor(desc: &str) -> Result<String, String> {
    if desc.starts_with('[') {
        let tokens = split_descriptors(desc)?;
        if tokens.len() != 1 {
            return Err(format!("bad array descriptor `{desc}`"));
        }
        return Ok(desc.replace('/', "."));
    }
    let inner = desc
        .strip_prefix('L')
        .and_then(|d| d.strip_suffix(';'))
        .ok_or_else(|| format!("expected class descriptor, got `{desc}`"))?;
    if inner.is_empty() || inner.contains(';') {
        return Err(format!("bad class descriptor `{desc}`"));
    }
    Ok(inner.replace('/', "."))
}

pub fn class_to_descriptor(class_name: &str) -> String {
    if class_name.starts_with('[') {
        class_name.replace('.', "/")
    } else {
        format!("L{};", class_name.replace('.', "/"))
    }
}

pub fn descriptor_width(desc: &str) -> usize {
    match desc {
        "J" | "D" => 2,
        _ => 1,
    }
}

/// Splits a concatenated descriptor list (`Ljava/lang/String;I[B`) into tokens.
pub fn split_descriptors(list: &str) -> Result<Vec<String>, String> {
    let bytes = list.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        while i < bytes.len() && bytes[i] == b'[' {
            i += 1;
        }
        if i >= bytes.len() {
            return Err(format!("dangling array prefix in `{list}`"));
        }
        match bytes[i] {
            b'V' | b'Z' | b'B' | b'S' | b'C' | b'I' | b'J' | b'F' | b'D' => i += 1,
            b'L' => {
                let end = list[i..]
                    .find(';')
                    .ok_or_else(|| format!("unterminated class descriptor in `{list}`"))?;
                if end == 1 {
                    return Err(format!("empty class descriptor in `{list}`"));
                }
                i += end + 1;
            }
            other => {
                return Err(format!(
                    "invalid descriptor character `{}` in `{list}`",
                    other as char
                ))
            }
        }
        out.push(list[start..i].to_string());
    }
    Ok(out)
}

pub fn is_valid_descriptor(desc: &str) -> bool {
    matches!(split_descriptors(desc), Ok(t) if t.len() == 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegKind {
    Local,
    Param,
}

/// A register operand as written in the source: `v<N>` or `p<N>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg {
    pub kind: RegKind,
    pub index: u32,
}

impl Reg {
    pub fn v(index: u32) -> Self {
        Reg { kind: RegKind::Local, index }
    }

    pub fn p(index: u32) -> Self {
        Reg { kind: RegKind::Param, index }
    }

    pub fn parse(text: &str) -> Option<Self> {
        let (kind, digits) = match text.as_bytes().first()? {
            b'v' => (RegKind::Local, &text[1..]),
            b'p' => (RegKind::Param, &text[1..]),
            _ => return None,
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(Reg { kind, index: digits.parse().ok()? })
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RegKind::Local => write!(f, "v{}", self.index),
            RegKind::Param => write!(f, "p{}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvokeKind {
    Virtual,
    Direct,
    Static,
    Interface,
    Super,
}

impl InvokeKind {
    pub fn has_receiver(self) -> bool {
        self != InvokeKind::Static
    }

    pub fn is_dispatched(self) -> bool {
        matches!(self, InvokeKind::Virtual | InvokeKind::Interface)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum InstructionKind {
    Const { dst: Reg, value: i64 },
    ConstString { dst: Reg, value: String },
    ConstWide { dst: Reg, value: i64 },
    Move { dst: Reg, src: Reg, wide: bool },
    MoveResult { dst: Reg, wide: bool },
    NewInstance { dst: Reg, class_name: String },
    Invoke { kind: InvokeKind, target: MethodSignature, args: Vec<Reg> },
    ArrayPut { value: Reg, array: Reg, index: Reg },
    FilledNewArray { elements: Vec<Reg>, element_type: String },
    StaticGet { dst: Reg, field: String },
    Label { name: String },
    Branch { targets: Vec<String>, conditional: bool },
    /// Any opcode outside the modeled subset, kept verbatim.
    Other { opcode: String, operands: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: InstructionKind,
    pub source_line: u32,
}

impl Instruction {
    /// Registers this instruction reads.
    pub fn uses(&self) -> Vec<Reg> {
        match &self.kind {
            InstructionKind::Move { src, .. } => vec![*src],
            InstructionKind::Invoke { args, .. } => args.clone(),
            InstructionKind::ArrayPut { value, array, index } => vec![*value, *array, *index],
            InstructionKind::FilledNewArray { elements, .. } => elements.clone(),
            InstructionKind::Other { opcode, operands } => {
                let mut regs: Vec<Reg> = operands.iter().filter_map(|o| Reg::parse(o)).collect();
                if other_defines_first(opcode) && !regs.is_empty() && !opcode.ends_with("/2addr") {
                    regs.remove(0);
                }
                regs
            }
            _ => Vec::new(),
        }
    }

    /// Register written by this instruction, with whether it is a wide (pair) write.
    pub fn def(&self) -> Option<(Reg, bool)> {
        match &self.kind {
            InstructionKind::Const { dst, .. }
            | InstructionKind::ConstString { dst, .. }
            | InstructionKind::NewInstance { dst, .. }
            | InstructionKind::StaticGet { dst, .. } => Some((*dst, false)),
            InstructionKind::ConstWide { dst, .. } => Some((*dst, true)),
            InstructionKind::Move { dst, wide, .. } | InstructionKind::MoveResult { dst, wide } => {
                Some((*dst, *wide))
            }
            InstructionKind::Other { opcode, operands } => {
                if !other_defines_first(opcode) {
                    return None;
                }
                let dst = Reg::parse(operands.first()?)?;
                Some((dst, other_is_wide(opcode)))
            }
            _ => None,
        }
    }

    pub fn is_label(&self) -> bool {
        matches!(self.kind, InstructionKind::Label { .. })
    }
}

/// Whether an unmodeled opcode writes its first register operand.
fn other_defines_first(opcode: &str) -> bool {
    const READ_ONLY_PREFIXES: &[&str] = &[
        "return", "throw", "monitor-", "iput", "sput", "aput", "fill-array-data",
        "packed-switch", "sparse-switch", "nop", "check-cast", "invoke-",
    ];
    !READ_ONLY_PREFIXES.iter().any(|p| opcode.starts_with(p))
}

fn other_is_wide(opcode: &str) -> bool {
    if opcode.starts_with("cmp") {
        return false;
    }
    if let Some((_, to)) = opcode.split_once("-to-") {
        return to.starts_with("long") || to.starts_with("double");
    }
    opcode.contains("-wide") || opcode.contains("-long") || opcode.contains("-double")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmaliMethod {
    pub signature: MethodSignature,
    pub register_count: u32,
    pub instructions: Vec<Instruction>,
    pub access_flags: BTreeSet<String>,
    /// Labels entered by control flow the IR does not model (exception handlers,
    /// switch cases).
    #[serde(default)]
    pub opaque_entries: BTreeSet<String>,
}

impl SmaliMethod {
    pub fn is_static(&self) -> bool {
        self.access_flags.contains("static")
    }

    /// Registers occupied by incoming arguments, receiver included.
    pub fn ins_count(&self) -> u32 {
        (self.signature.param_register_width() + usize::from(!self.is_static())) as u32
    }

    /// Maps a `v`/`p` operand onto the method's flat register file.
    pub fn physical(&self, reg: Reg) -> u32 {
        match reg.kind {
            RegKind::Local => reg.index,
            RegKind::Param => self.register_count.saturating_sub(self.ins_count()) + reg.index,
        }
    }

    /// Whether the physical register holds an incoming argument at entry.
    pub fn is_param_register(&self, physical: u32) -> bool {
        physical >= self.register_count.saturating_sub(self.ins_count())
            && physical < self.register_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmaliClass {
    pub name: String,
    pub superclass: Option<String>,
    pub interfaces: Vec<String>,
    pub access_flags: BTreeSet<String>,
    pub methods: Vec<SmaliMethod>,
}

/// Parsed view of one decompiled app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppIR {
    pub app_id: String,
    pub classes: BTreeMap<String, SmaliClass>,
    pub file_count: usize,
    pub warnings: Vec<String>,
}

impl AppIR {
    pub fn methods(&self) -> impl Iterator<Item = &SmaliMethod> {
        self.classes.values().flat_map(|c| c.methods.iter())
    }

    pub fn method_count(&self) -> usize {
        self.classes.values().map(|c| c.methods.len()).sum()
    }

    pub fn find_method(&self, sig: &MethodSignature) -> Option<&SmaliMethod> {
        self.classes
            .get(&sig.class_name)?
            .methods
            .iter()
            .find(|m| &m.signature == sig)
    }

    /// Distinct packages that declare at least one class in this app.
    pub fn packages(&self) -> BTreeSet<String> {
        self.classes.keys().map(|c| package_of(c).to_string()).collect()
    }
}

pub(crate) fn check_invariants(class: &SmaliClass) -> Result<(), SmaliError> {
    for m in &class.methods {
        if m.signature.class_name != class.name {
            return Err(SmaliError::Malformed {
                line: 0,
                reason: format!("method {} not owned by {}", m.signature, class.name),
            });
        }
    }
    Ok(())
}
