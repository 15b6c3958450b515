//! Line-oriented parser for the baksmali text subset the analyses need.

use std::collections::BTreeSet;

use super::types::{
    check_invariants, class_from_descriptor, Instruction, InstructionKind, InvokeKind,
    MethodSignature, Reg, RegKind, SmaliClass, SmaliMethod,
};
use super::SmaliError;

/// Directive blocks whose body is skipped wholesale.
const SKIPPED_BLOCKS: &[(&str, &str)] = &[
    (".annotation", ".end annotation"),
    (".array-data", ".end array-data"),
    (".packed-switch", ".end packed-switch"),
    (".sparse-switch", ".end sparse-switch"),
];

struct MethodBuilder {
    header_line: u32,
    signature: MethodSignature,
    access_flags: BTreeSet<String>,
    registers: Option<u32>,
    locals: Option<u32>,
    instructions: Vec<Instruction>,
    opaque_entries: BTreeSet<String>,
}

fn malformed(line: u32, reason: impl Into<String>) -> SmaliError {
    SmaliError::Malformed { line, reason: reason.into() }
}

/// Parses one `.smali` class file.
pub fn parse_smali_file(text: &str) -> Result<SmaliClass, SmaliError> {
    let mut class_name: Option<String> = None;
    let mut class_flags = BTreeSet::new();
    let mut superclass = None;
    let mut interfaces = Vec::new();
    let mut methods = Vec::new();
    let mut current: Option<MethodBuilder> = None;
    // (end marker, collect switch labels?)
    let mut skipping: Option<(&'static str, bool)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let line = raw.trim();

        if let Some((end, collect)) = skipping {
            if line == end {
                skipping = None;
            } else if collect {
                if let Some(m) = current.as_mut() {
                    // packed: `:pswitch_0`; sparse: `0x1 -> :sswitch_0`
                    if let Some(pos) = line.rfind(':') {
                        m.opaque_entries.insert(line[pos + 1..].trim().to_string());
                    }
                }
            }
            continue;
        }

        if line.is_empty() || line.starts_with('#') {
            continue;
        }

        if line.starts_with('.') {
            let directive = line.split_whitespace().next().unwrap_or("");
            if let Some((_, end)) = SKIPPED_BLOCKS.iter().find(|(start, _)| *start == directive) {
                let collect = directive == ".packed-switch" || directive == ".sparse-switch";
                skipping = Some((end, collect));
                continue;
            }
            match directive {
                ".class" => {
                    let mut tokens: Vec<&str> = line.split_whitespace().skip(1).collect();
                    let desc = tokens
                        .pop()
                        .ok_or_else(|| malformed(line_no, "`.class` without a name"))?;
                    class_name = Some(class_from_descriptor(desc).map_err(|e| malformed(line_no, e))?);
                    class_flags = tokens.into_iter().map(str::to_string).collect();
                }
                ".super" => {
                    let desc = line.split_whitespace().nth(1).unwrap_or("");
                    superclass =
                        Some(class_from_descriptor(desc).map_err(|e| malformed(line_no, e))?);
                }
                ".implements" => {
                    let desc = line.split_whitespace().nth(1).unwrap_or("");
                    interfaces.push(class_from_descriptor(desc).map_err(|e| malformed(line_no, e))?);
                }
                ".method" => {
                    if current.is_some() {
                        return Err(malformed(line_no, "nested `.method` without `.end method`"));
                    }
                    let owner = class_name
                        .as_ref()
                        .ok_or_else(|| malformed(line_no, "`.method` before `.class`"))?;
                    current = Some(parse_method_header(line, line_no, owner)?);
                }
                ".end" if line == ".end method" => {
                    let m = current
                        .take()
                        .ok_or_else(|| malformed(line_no, "`.end method` without `.method`"))?;
                    methods.push(finish_method(m)?);
                }
                ".registers" | ".locals" => {
                    let m = current
                        .as_mut()
                        .ok_or_else(|| malformed(line_no, format!("`{directive}` outside method")))?;
                    let n = line
                        .split_whitespace()
                        .nth(1)
                        .and_then(|t| parse_int_literal(t).ok())
                        .filter(|n| *n >= 0 && *n <= u16::MAX as i64)
                        .ok_or_else(|| malformed(line_no, format!("bad `{directive}` count")))?;
                    if directive == ".registers" {
                        m.registers = Some(n as u32);
                    } else {
                        m.locals = Some(n as u32);
                    }
                }
                ".catch" | ".catchall" => {
                    if let Some(m) = current.as_mut() {
                        if let Some(handler) = line.rsplit(' ').next().and_then(|t| t.strip_prefix(':')) {
                            m.opaque_entries.insert(handler.to_string());
                        }
                    }
                }
                // .source, .field, .end field, .param, .line, .local, .prologue, ...
                _ => {}
            }
            continue;
        }

        let Some(m) = current.as_mut() else {
            return Err(malformed(line_no, format!("instruction outside method: `{line}`")));
        };
        let kind = parse_instruction(line).map_err(|r| malformed(line_no, r))?;
        if let InstructionKind::Invoke { kind: ik, target, args } = &kind {
            let expected = target.param_register_width() + usize::from(ik.has_receiver());
            if args.len() != expected {
                return Err(malformed(
                    line_no,
                    format!(
                        "invoke of {} passes {} registers, descriptor needs {}",
                        target,
                        args.len(),
                        expected
                    ),
                ));
            }
        }
        m.instructions.push(Instruction { kind, source_line: line_no });
    }

    if let Some(m) = current {
        return Err(malformed(m.header_line, "`.method` without `.end method`"));
    }
    if skipping.is_some() {
        return Err(malformed(text.lines().count() as u32, "unterminated directive block"));
    }
    let name = class_name.ok_or_else(|| malformed(1, "missing `.class` directive"))?;
    let class = SmaliClass {
        name,
        superclass,
        interfaces,
        access_flags: class_flags,
        methods,
    };
    check_invariants(&class)?;
    Ok(class)
}

fn parse_method_header(line: &str, line_no: u32, owner: &str) -> Result<MethodBuilder, SmaliError> {
    let mut tokens: Vec<&str> = line.split_whitespace().skip(1).collect();
    let decl = tokens
        .pop()
        .ok_or_else(|| malformed(line_no, "`.method` without a declaration"))?;
    let owner_desc = super::types::class_to_descriptor(owner);
    let signature = MethodSignature::parse_smali_ref(&format!("{owner_desc}->{decl}"))
        .map_err(|e| malformed(line_no, e))?;
    Ok(MethodBuilder {
        header_line: line_no,
        signature,
        access_flags: tokens.into_iter().map(str::to_string).collect(),
        registers: None,
        locals: None,
        instructions: Vec::new(),
        opaque_entries: BTreeSet::new(),
    })
}

fn finish_method(m: MethodBuilder) -> Result<SmaliMethod, SmaliError> {
    let is_static = m.access_flags.contains("static");
    let ins = (m.signature.param_register_width() + usize::from(!is_static)) as u32;
    let mut max_v: Option<u32> = None;
    let mut max_p: Option<u32> = None;
    for ins_ in &m.instructions {
        let mut regs = ins_.uses();
        if let Some((r, wide)) = ins_.def() {
            regs.push(r);
            if wide {
                regs.push(Reg { kind: r.kind, index: r.index + 1 });
            }
        }
        for r in regs {
            let slot = match r.kind {
                RegKind::Local => &mut max_v,
                RegKind::Param => &mut max_p,
            };
            *slot = Some(slot.map_or(r.index, |x| x.max(r.index)));
        }
    }
    if let Some(p) = max_p {
        if p >= ins {
            return Err(malformed(
                m.header_line,
                format!("p{p} exceeds the {ins} argument registers of {}", m.signature),
            ));
        }
    }
    let register_count = match (m.registers, m.locals) {
        (Some(r), _) => r,
        (None, Some(l)) => l + ins,
        (None, None) if m.instructions.is_empty() => 0,
        (None, None) => max_v.map_or(0, |v| v + 1) + ins,
    };
    if register_count < ins && !m.instructions.is_empty() {
        return Err(malformed(m.header_line, "register count smaller than argument registers"));
    }
    if let Some(v) = max_v {
        if v >= register_count {
            return Err(malformed(
                m.header_line,
                format!("v{v} referenced but only {register_count} registers declared"),
            ));
        }
    }
    Ok(SmaliMethod {
        signature: m.signature,
        register_count,
        instructions: m.instructions,
        access_flags: m.access_flags,
        opaque_entries: m.opaque_entries,
    })
}

/// Decodes one opcode line (already trimmed, not a directive or comment).
pub fn parse_instruction(line: &str) -> Result<InstructionKind, String> {
    if let Some(label) = line.strip_prefix(':') {
        if label.is_empty() {
            return Err("empty label".into());
        }
        return Ok(InstructionKind::Label { name: label.to_string() });
    }
    let (opcode, rest) = match line.find(char::is_whitespace) {
        Some(pos) => (&line[..pos], line[pos..].trim()),
        None => (line, ""),
    };
    let operands = split_operands(rest)?;
    let reg = |i: usize| -> Result<Reg, String> {
        operands
            .get(i)
            .and_then(|o| Reg::parse(o))
            .ok_or_else(|| format!("`{opcode}` expects a register operand at position {i}"))
    };
    let operand = |i: usize| -> Result<&str, String> {
        operands
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| format!("`{opcode}` is missing operand {i}"))
    };

    let kind = match opcode {
        "const/4" | "const/16" | "const" | "const/high16" => InstructionKind::Const {
            dst: reg(0)?,
            value: parse_int_literal(operand(1)?)?,
        },
        "const-wide/16" | "const-wide/32" | "const-wide" | "const-wide/high16" => {
            InstructionKind::ConstWide { dst: reg(0)?, value: parse_int_literal(operand(1)?)? }
        }
        "const-string" | "const-string/jumbo" => InstructionKind::ConstString {
            dst: reg(0)?,
            value: parse_string_literal(operand(1)?)?,
        },
        "move" | "move/from16" | "move/16" | "move-object" | "move-object/from16"
        | "move-object/16" => InstructionKind::Move { dst: reg(0)?, src: reg(1)?, wide: false },
        "move-wide" | "move-wide/from16" | "move-wide/16" => {
            InstructionKind::Move { dst: reg(0)?, src: reg(1)?, wide: true }
        }
        "move-result" | "move-result-object" => InstructionKind::MoveResult { dst: reg(0)?, wide: false },
        "move-result-wide" => InstructionKind::MoveResult { dst: reg(0)?, wide: true },
        "new-instance" => InstructionKind::NewInstance {
            dst: reg(0)?,
            class_name: class_from_descriptor(operand(1)?)?,
        },
        "aput-object" => InstructionKind::ArrayPut { value: reg(0)?, array: reg(1)?, index: reg(2)? },
        "filled-new-array" | "filled-new-array/range" => InstructionKind::FilledNewArray {
            elements: parse_register_list(operand(0)?)?,
            element_type: operand(1)?.to_string(),
        },
        "goto" | "goto/16" | "goto/32" => InstructionKind::Branch {
            targets: vec![parse_label_ref(operand(0)?)?],
            conditional: false,
        },
        op if op.starts_with("sget") => InstructionKind::StaticGet {
            dst: reg(0)?,
            field: operand(1)?.to_string(),
        },
        op if op.starts_with("if-") => InstructionKind::Branch {
            targets: vec![parse_label_ref(
                operands.last().ok_or_else(|| format!("`{op}` without target"))?,
            )?],
            conditional: true,
        },
        op if op.starts_with("invoke-") => {
            let base = op.strip_suffix("/range").unwrap_or(op);
            let kind = match base {
                "invoke-virtual" => Some(InvokeKind::Virtual),
                "invoke-direct" => Some(InvokeKind::Direct),
                "invoke-static" => Some(InvokeKind::Static),
                "invoke-interface" => Some(InvokeKind::Interface),
                "invoke-super" => Some(InvokeKind::Super),
                _ => None,
            };
            match kind {
                Some(kind) => InstructionKind::Invoke {
                    kind,
                    args: parse_register_list(operand(0)?)?,
                    target: MethodSignature::parse_smali_ref(operand(1)?)
                        .map_err(|e| format!("unparsable invoke target: {e}"))?,
                },
                None => InstructionKind::Other { opcode: op.to_string(), operands },
            }
        }
        _ => InstructionKind::Other { opcode: opcode.to_string(), operands },
    };
    Ok(kind)
}

/// Splits comma-separated operands, honoring quotes and braces and dropping a trailing `#` comment.
fn split_operands(rest: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut escaped = false;
    let mut depth = 0usize;
    for c in rest.chars() {
        if in_str {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            '{' => {
                depth += 1;
                cur.push(c);
            }
            '}' => {
                depth = depth.checked_sub(1).ok_or("unbalanced `}`")?;
                cur.push(c);
            }
            '#' if depth == 0 => break,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if in_str {
        return Err("unterminated string literal".into());
    }
    if depth != 0 {
        return Err("unbalanced `{`".into());
    }
    let last = cur.trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last.to_string());
    }
    Ok(out)
}

fn parse_register_list(text: &str) -> Result<Vec<Reg>, String> {
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| format!("expected register list, got `{text}`"))?
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((a, b)) = inner.split_once("..") {
        let a = Reg::parse(a.trim()).ok_or_else(|| format!("bad range start in `{text}`"))?;
        let b = Reg::parse(b.trim()).ok_or_else(|| format!("bad range end in `{text}`"))?;
        if a.kind != b.kind || b.index < a.index {
            return Err(format!("bad register range `{text}`"));
        }
        return Ok((a.index..=b.index).map(|i| Reg { kind: a.kind, index: i }).collect());
    }
    inner
        .split(',')
        .map(|r| Reg::parse(r.trim()).ok_or_else(|| format!("bad register `{}`", r.trim())))
        .collect()
}

fn parse_label_ref(text: &str) -> Result<String, String> {
    text.strip_prefix(':')
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or_else(|| format!("expected label, got `{text}`"))
}

/// Decodes smali integer literals: `0x3`, `-0x1`, `12`, `0x7fL`.
pub fn parse_int_literal(text: &str) -> Result<i64, String> {
    let t = text.trim();
    let t = t.strip_suffix(['L', 'l', 't', 's']).unwrap_or(t);
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t),
    };
    let magnitude: u64 = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).map_err(|e| format!("bad literal `{text}`: {e}"))?
    } else {
        body.parse().map_err(|e| format!("bad literal `{text}`: {e}"))?
    };
    let v = if neg { -(magnitude as i128) } else { magnitude as i128 };
    if v > i64::MAX as i128 {
        // two's complement spelling of a negative wide literal
        Ok(magnitude as i64)
    } else if v < i64::MIN as i128 {
        Err(format!("literal `{text}` out of range"))
    } else {
        Ok(v as i64)
    }
}

fn parse_string_literal(text: &str) -> Result<String, String> {
    let inner = text
        .strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .ok_or_else(|| format!("expected string literal, got `{text}`"))?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('b') => out.push('\u{8}'),
            Some('f') => out.push('\u{c}'),
            Some('0') => out.push('\0'),
            Some('"') => out.push('"'),
            Some('\'') => out.push('\''),
            Some('\\') => out.push('\\'),
            Some('u') => {
                let hex: String = chars.by_ref().take(4).collect();
                let code = u32::from_str_radix(&hex, 16)
                    .map_err(|_| format!("bad unicode escape in `{text}`"))?;
                out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
            }
            other => return Err(format!("bad escape `\\{}` in `{text}`", other.unwrap_or(' '))),
        }
    }
    Ok(out)
}
