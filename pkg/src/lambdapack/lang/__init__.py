"""DSL front end: AST, parser, printer, evaluation, iteration-space tools."""

from .ast import (
    Assign,
    BinOp,
    Bop,
    CmpOp,
    Cop,
    EvalError,
    Expr,
    FloatConst,
    For,
    IdxExpr,
    If,
    IntConst,
    KernelCall,
    LangError,
    LineContext,
    MatrixDecl,
    MatrixRole,
    OutputDecl,
    ParamDecl,
    Pow,
    Program,
    Ref,
    Stmt,
    UnOp,
    UnboundParameterError,
    Uop,
)
from .evaluator import eval_index, eval_scalar, free_refs, substitute
from .iteration import (
    LoopRangeError,
    NodeRef,
    SsaViolation,
    enumerate_nodes,
    format_node,
    loop_range,
    make_node,
    node_reads,
    node_scalar_args,
    node_writes,
    oracle_edges,
    output_tiles,
    parse_node,
    validate_ssa,
)
from .parser import DEFAULT_KERNEL_ARITIES, ParseError, parse_program
from .printer import print_expr, print_idx, print_program

__all__ = [
    "Assign", "BinOp", "Bop", "CmpOp", "Cop", "EvalError", "Expr",
    "FloatConst", "For", "IdxExpr", "If", "IntConst", "KernelCall",
    "LangError", "LineContext", "LoopRangeError", "MatrixDecl", "MatrixRole",
    "NodeRef", "OutputDecl", "ParamDecl", "ParseError", "Pow", "Program",
    "Ref", "SsaViolation", "Stmt", "UnOp", "UnboundParameterError", "Uop",
    "DEFAULT_KERNEL_ARITIES", "enumerate_nodes", "eval_index", "eval_scalar",
    "format_node", "free_refs", "loop_range", "make_node", "node_reads",
    "node_scalar_args", "node_writes", "oracle_edges", "output_tiles",
    "parse_node", "parse_program", "print_expr", "print_idx",
    "print_program", "substitute", "validate_ssa",
]
