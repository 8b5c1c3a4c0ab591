//! Frontend: lexer, parser, AST, and pretty-printer for the annotated C
//! subset, plus the same grammar extended with the OpenCL kernel dialect
//! (`__kernel`, `__global`) used by embedded kernel sources.

pub mod ast;
pub mod parser;
pub mod printer;
pub mod token;

pub use ast::{strip_locations, TranslationUnit};
pub use parser::{parse, ParseError};
pub use printer::print;
pub use token::{tokenize, LexError, Token};
