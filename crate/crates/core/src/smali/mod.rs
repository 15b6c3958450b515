//! Smali intermediate representation.
//!
//! Consumes apktool output (`smali/`, `smali_classes2/`, ...) and produces an
//! [`AppIR`] carrying just enough structure for call-site detection, call
//! graph construction and intra-procedural slicing.

mod app;
mod parser;
mod types;

use std::path::PathBuf;

use thiserror::Error;

pub use app::{list_smali_files, parse_app_dir, smali_dirs};
pub use parser::{parse_instruction, parse_int_literal, parse_smali_file};
pub use types::{
    class_from_descriptor, class_to_descriptor, descriptor_width, is_valid_descriptor, package_of,
    split_descriptors, AppIR, Instruction, InstructionKind, InvokeKind, MethodSignature, Reg,
    RegKind, SmaliClass, SmaliMethod,
};

#[derive(Debug, Error)]
pub enum SmaliError {
    #[error("malformed smali at line {line}: {reason}")]
    Malformed { line: u32, reason: String },
    #[error("no classes could be parsed under {0}")]
    EmptyApp(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
