use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::smali::{InstructionKind, SmaliMethod};

/// Where a register value may have been defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DefSite {
    /// Incoming argument at method entry.
    Param,
    /// Never written on some path from entry.
    Undefined,
    /// Reached through control flow the IR does not model.
    Opaque,
    /// Written by the instruction at this index.
    At(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    pub succs: Vec<usize>,
}

type RegDefs = Vec<BTreeSet<DefSite>>;

/// Basic-block partition of a method with reaching definitions per block entry.
#[derive(Debug, Clone)]
pub struct BasicBlockIndex {
    blocks: Vec<Block>,
    block_of: Vec<usize>,
    in_state: Vec<RegDefs>,
    width: usize,
}

fn is_terminator(kind: &InstructionKind) -> bool {
    match kind {
        InstructionKind::Branch { .. } => true,
        InstructionKind::Other { opcode, .. } => opcode.starts_with("return") || opcode == "throw",
        _ => false,
    }
}

impl BasicBlockIndex {
    pub fn build(method: &SmaliMethod) -> Self {
        let ins = &method.instructions;
        let n = ins.len();
        // one spare slot so a wide write to the last register stays in bounds
        let width = method.register_count as usize + 1;

        let mut starts = BTreeSet::new();
        if n > 0 {
            starts.insert(0);
        }
        for (i, instr) in ins.iter().enumerate() {
            if instr.is_label() {
                starts.insert(i);
            }
            if is_terminator(&instr.kind) && i + 1 < n {
                starts.insert(i + 1);
            }
        }
        let starts: Vec<usize> = starts.into_iter().collect();
        let mut blocks: Vec<Block> = starts
            .iter()
            .enumerate()
            .map(|(b, &s)| Block {
                start: s,
                end: starts.get(b + 1).copied().unwrap_or(n),
                succs: Vec::new(),
            })
            .collect();
        let mut block_of = vec![0; n];
        for (b, blk) in blocks.iter().enumerate() {
            block_of[blk.start..blk.end].fill(b);
        }
        let label_block: HashMap<&str, usize> = ins
            .iter()
            .enumerate()
            .filter_map(|(i, instr)| match &instr.kind {
                InstructionKind::Label { name } => Some((name.as_str(), block_of[i])),
                _ => None,
            })
            .collect();

        let count = blocks.len();
        for (b, blk) in blocks.iter_mut().enumerate() {
            let last = &ins[blk.end - 1].kind;
            let mut succs = BTreeSet::new();
            let falls_through = match last {
                InstructionKind::Branch { targets, conditional } => {
                    succs.extend(targets.iter().filter_map(|t| label_block.get(t.as_str()).copied()));
                    *conditional
                }
                k => !is_terminator(k),
            };
            if falls_through && b + 1 < count {
                succs.insert(b + 1);
            }
            blk.succs = succs.into_iter().collect();
        }

        // Initial contributions: method entry and opaque entry labels.
        let mut seed: Vec<RegDefs> = vec![vec![BTreeSet::new(); width]; count];
        if count > 0 {
            for (r, set) in seed[0].iter_mut().enumerate() {
                set.insert(if method.is_param_register(r as u32) {
                    DefSite::Param
                } else {
                    DefSite::Undefined
                });
            }
        }
        for (b, blk) in blocks.iter().enumerate() {
            if let InstructionKind::Label { name } = &ins[blk.start].kind {
                if method.opaque_entries.contains(name) {
                    for set in seed[b].iter_mut() {
                        set.insert(DefSite::Opaque);
                    }
                }
            }
        }

        let mut index = BasicBlockIndex { blocks, block_of, in_state: seed.clone(), width };
        let mut out: Vec<Option<RegDefs>> = vec![None; count];
        let mut work: VecDeque<usize> = (0..count).collect();
        let mut queued = vec![true; count];
        while let Some(b) = work.pop_front() {
            queued[b] = false;
            let mut state = index.in_state[b].clone();
            for i in index.blocks[b].start..index.blocks[b].end {
                index.transfer(method, i, &mut state);
            }
            if out[b].as_ref() == Some(&state) {
                continue;
            }
            for &s in &index.blocks[b].succs.clone() {
                let target = &mut index.in_state[s];
                let mut changed = false;
                for (dst, src) in target.iter_mut().zip(state.iter()) {
                    for d in src {
                        changed |= dst.insert(*d);
                    }
                }
                if changed && !queued[s] {
                    queued[s] = true;
                    work.push_back(s);
                }
            }
            out[b] = Some(state);
        }
        index
    }

    fn transfer(&self, method: &SmaliMethod, i: usize, state: &mut RegDefs) {
        if let Some((reg, wide)) = method.instructions[i].def() {
            let p = method.physical(reg) as usize;
            let hi = if wide { p + 1 } else { p };
            for r in p..=hi {
                if r < self.width {
                    state[r] = BTreeSet::from([DefSite::At(i)]);
                }
            }
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_of(&self, instr: usize) -> usize {
        self.block_of[instr]
    }

    /// Definitions of physical register `reg` that reach the point just before instruction `at`.
    pub fn defs_before(&self, method: &SmaliMethod, at: usize, reg: u32) -> BTreeSet<DefSite> {
        let reg = reg as usize;
        if reg >= self.width || at >= self.block_of.len() {
            return BTreeSet::from([DefSite::Undefined]);
        }
        let b = self.block_of[at];
        let mut current = self.in_state[b][reg].clone();
        for i in self.blocks[b].start..at {
            if let Some((r, wide)) = method.instructions[i].def() {
                let p = method.physical(r) as usize;
                if p == reg || (wide && p + 1 == reg) {
                    current = BTreeSet::from([DefSite::At(i)]);
                }
            }
        }
        current
    }

    /// Recomputes every block-entry set from its predecessors and checks it is unchanged.
    pub fn is_fixed_point(&self, method: &SmaliMethod) -> bool {
        let count = self.blocks.len();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); count];
        for (b, blk) in self.blocks.iter().enumerate() {
            for &s in &blk.succs {
                preds[s].push(b);
            }
        }
        let outs: Vec<RegDefs> = (0..count)
            .map(|b| {
                let mut st = self.in_state[b].clone();
                for i in self.blocks[b].start..self.blocks[b].end {
                    self.transfer(method, i, &mut st);
                }
                st
            })
            .collect();
        (0..count).all(|b| {
            let mut expected: RegDefs = vec![BTreeSet::new(); self.width];
            if b == 0 {
                for (r, set) in expected.iter_mut().enumerate() {
                    set.insert(if method.is_param_register(r as u32) {
                        DefSite::Param
                    } else {
                        DefSite::Undefined
                    });
                }
            }
            if let InstructionKind::Label { name } = &method.instructions[self.blocks[b].start].kind {
                if method.opaque_entries.contains(name) {
                    expected.iter_mut().for_each(|s| {
                        s.insert(DefSite::Opaque);
                    });
                }
            }
            for &p in &preds[b] {
                for (dst, src) in expected.iter_mut().zip(outs[p].iter()) {
                    dst.extend(src.iter().copied());
                }
            }
            expected == self.in_state[b]
        })
    }
}
