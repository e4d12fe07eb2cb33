//! Bag-of-node-types structural features.

use std::collections::BTreeMap;
use std::convert::Infallible;

use rustpython_parser::ast::{self, fold, Fold};
use rustpython_parser::text_size::TextRange;
use rustpython_parser::Parse;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cosine at or above this counts as an exact structural duplicate.
pub const DUPLICATE_COSINE: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error: {0}")]
pub struct ParseError(pub String);

/// Node-type occurrence counts of a program's syntax tree.
///
/// Stored sparsely; the dense L2-normalized view over any vocabulary is
/// available through [`AstFeatureVector::normalized`] and
/// [`AstFeatureVector::dense_over`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstFeatureVector {
    pub counts: BTreeMap<String, u32>,
}

impl AstFeatureVector {
    pub fn from_counts(counts: BTreeMap<String, u32>) -> Self {
        Self { counts: counts.into_iter().filter(|(_, n)| *n > 0).collect() }
    }

    pub fn total_nodes(&self) -> u64 {
        self.counts.values().map(|&n| u64::from(n)).sum()
    }

    fn norm(&self) -> f64 {
        self.counts.values().map(|&n| f64::from(n) * f64::from(n)).sum::<f64>().sqrt()
    }

    /// Unit-length weights per node type; empty when there are no nodes.
    pub fn normalized(&self) -> BTreeMap<&str, f64> {
        let norm = self.norm();
        if norm == 0.0 {
            return BTreeMap::new();
        }
        self.counts.iter().map(|(k, &n)| (k.as_str(), f64::from(n) / norm)).collect()
    }

    /// Dense normalized vector over `vocab`; unseen types are 0.
    pub fn dense_over(&self, vocab: &[&str]) -> Vec<f64> {
        let weights = self.normalized();
        vocab.iter().map(|k| weights.get(k).copied().unwrap_or(0.0)).collect()
    }

    /// Cosine over the union of both vocabularies; 0 when either side is empty.
    pub fn cosine(&self, other: &AstFeatureVector) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self
            .counts
            .iter()
            .filter_map(|(k, &a)| other.counts.get(k).map(|&b| f64::from(a) * f64::from(b)))
            .sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }

    pub fn is_duplicate_of(&self, other: &AstFeatureVector) -> bool {
        self.cosine(other) >= DUPLICATE_COSINE
    }
}

/// Parses `source`, drops docstrings and module-level asserts, and counts
/// every node type in the remaining tree. Comments never reach the tree.
pub fn ast_features(source: &str) -> Result<AstFeatureVector, ParseError> {
    let mut body = ast::Suite::parse(source, "<candidate>").map_err(|e| ParseError(e.to_string()))?;
    strip_docstring(&mut body);
    body.retain(|stmt| !matches!(stmt, ast::Stmt::Assert(_)));

    let mut counter = NodeCounter::default();
    counter.bump("Module");
    for stmt in body {
        let Ok(_) = counter.fold_stmt(stmt);
    }
    Ok(AstFeatureVector::from_counts(counter.counts))
}

/// Drops full-line comments, for callers that embed preprocessed text.
pub fn strip_comment_lines(source: &str) -> String {
    source
        .lines()
        .filter(|line| !line.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn is_docstring(stmt: &ast::Stmt) -> bool {
    match stmt {
        ast::Stmt::Expr(e) => matches!(
            e.value.as_ref(),
            ast::Expr::Constant(c) if matches!(c.value, ast::Constant::Str(_))
        ),
        _ => false,
    }
}

fn strip_docstring(body: &mut Vec<ast::Stmt>) {
    if body.first().is_some_and(is_docstring) {
        body.remove(0);
    }
}

#[derive(Default)]
struct NodeCounter {
    counts: BTreeMap<String, u32>,
}

impl NodeCounter {
    fn bump(&mut self, name: &str) {
        *self.counts.entry(name.to_string()).or_insert(0) += 1;
    }
}

macro_rules! tuple_variant_name {
    ($node:expr, $enum:path; $($variant:ident),+ $(,)?) => {{
        use $enum as E;
        match $node {
            $(E::$variant(..) => stringify!($variant),)+
        }
    }};
}

macro_rules! unit_variant_name {
    ($node:expr, $enum:path; $($variant:ident),+ $(,)?) => {{
        use $enum as E;
        match $node {
            $(E::$variant => stringify!($variant),)+
        }
    }};
}

fn stmt_name(stmt: &ast::Stmt) -> &'static str {
    tuple_variant_name!(stmt, ast::Stmt;
        FunctionDef, AsyncFunctionDef, ClassDef, Return, Delete, Assign, TypeAlias, AugAssign,
        AnnAssign, For, AsyncFor, While, If, With, AsyncWith, Match, Raise, Try, TryStar, Assert,
        Import, ImportFrom, Global, Nonlocal, Expr, Pass, Break, Continue)
}

fn expr_name(expr: &ast::Expr) -> &'static str {
    tuple_variant_name!(expr, ast::Expr;
        BoolOp, NamedExpr, BinOp, UnaryOp, Lambda, IfExp, Dict, Set, ListComp, SetComp, DictComp,
        GeneratorExp, Await, Yield, YieldFrom, Compare, Call, FormattedValue, JoinedStr, Constant,
        Attribute, Subscript, Starred, Name, List, Tuple, Slice)
}

fn pattern_name(p: &ast::Pattern) -> &'static str {
    tuple_variant_name!(p, ast::Pattern;
        MatchValue, MatchSingleton, MatchSequence, MatchMapping, MatchClass, MatchStar, MatchAs, MatchOr)
}

fn type_param_name(p: &ast::TypeParam) -> &'static str {
    tuple_variant_name!(p, ast::TypeParam; TypeVar, ParamSpec, TypeVarTuple)
}

impl Fold<TextRange> for NodeCounter {
    type TargetU = TextRange;
    type Error = Infallible;
    type UserContext = ();

    fn will_map_user(&mut self, _user: &TextRange) -> Self::UserContext {}

    fn map_user(&mut self, user: TextRange, _context: ()) -> Result<TextRange, Infallible> {
        Ok(user)
    }

    fn fold_stmt(&mut self, node: ast::Stmt) -> Result<ast::Stmt, Infallible> {
        self.bump(stmt_name(&node));
        fold::fold_stmt(self, node)
    }

    fn fold_stmt_function_def(
        &mut self,
        mut node: ast::StmtFunctionDef,
    ) -> Result<ast::StmtFunctionDef, Infallible> {
        strip_docstring(&mut node.body);
        fold::fold_stmt_function_def(self, node)
    }

    fn fold_stmt_async_function_def(
        &mut self,
        mut node: ast::StmtAsyncFunctionDef,
    ) -> Result<ast::StmtAsyncFunctionDef, Infallible> {
        strip_docstring(&mut node.body);
        fold::fold_stmt_async_function_def(self, node)
    }

    fn fold_stmt_class_def(
        &mut self,
        mut node: ast::StmtClassDef,
    ) -> Result<ast::StmtClassDef, Infallible> {
        strip_docstring(&mut node.body);
        fold::fold_stmt_class_def(self, node)
    }

    fn fold_expr(&mut self, node: ast::Expr) -> Result<ast::Expr, Infallible> {
        self.bump(expr_name(&node));
        fold::fold_expr(self, node)
    }

    fn fold_expr_context(&mut self, node: ast::ExprContext) -> Result<ast::ExprContext, Infallible> {
        self.bump(unit_variant_name!(&node, ast::ExprContext; Load, Store, Del));
        Ok(node)
    }

    fn fold_boolop(&mut self, node: ast::BoolOp) -> Result<ast::BoolOp, Infallible> {
        self.bump(unit_variant_name!(&node, ast::BoolOp; And, Or));
        Ok(node)
    }

    fn fold_operator(&mut self, node: ast::Operator) -> Result<ast::Operator, Infallible> {
        self.bump(unit_variant_name!(&node, ast::Operator;
            Add, Sub, Mult, MatMult, Div, Mod, Pow, LShift, RShift, BitOr, BitXor, BitAnd, FloorDiv));
        Ok(node)
    }

    fn fold_unaryop(&mut self, node: ast::UnaryOp) -> Result<ast::UnaryOp, Infallible> {
        self.bump(unit_variant_name!(&node, ast::UnaryOp; Invert, Not, UAdd, USub));
        Ok(node)
    }

    fn fold_cmpop(&mut self, node: ast::CmpOp) -> Result<ast::CmpOp, Infallible> {
        self.bump(unit_variant_name!(&node, ast::CmpOp;
            Eq, NotEq, Lt, LtE, Gt, GtE, Is, IsNot, In, NotIn));
        Ok(node)
    }

    fn fold_comprehension(
        &mut self,
        node: ast::Comprehension,
    ) -> Result<ast::Comprehension, Infallible> {
        self.bump("comprehension");
        fold::fold_comprehension(self, node)
    }

    fn fold_excepthandler(
        &mut self,
        node: ast::ExceptHandler,
    ) -> Result<ast::ExceptHandler, Infallible> {
        self.bump("ExceptHandler");
        fold::fold_excepthandler(self, node)
    }

    fn fold_arguments(&mut self, node: ast::Arguments) -> Result<ast::Arguments, Infallible> {
        self.bump("arguments");
        fold::fold_arguments(self, node)
    }

    fn fold_arg(&mut self, node: ast::Arg) -> Result<ast::Arg, Infallible> {
        self.bump("arg");
        fold::fold_arg(self, node)
    }

    fn fold_keyword(&mut self, node: ast::Keyword) -> Result<ast::Keyword, Infallible> {
        self.bump("keyword");
        fold::fold_keyword(self, node)
    }

    fn fold_alias(&mut self, node: ast::Alias) -> Result<ast::Alias, Infallible> {
        self.bump("alias");
        fold::fold_alias(self, node)
    }

    fn fold_withitem(&mut self, node: ast::WithItem) -> Result<ast::WithItem, Infallible> {
        self.bump("withitem");
        fold::fold_withitem(self, node)
    }

    fn fold_match_case(&mut self, node: ast::MatchCase) -> Result<ast::MatchCase, Infallible> {
        self.bump("match_case");
        fold::fold_match_case(self, node)
    }

    fn fold_pattern(&mut self, node: ast::Pattern) -> Result<ast::Pattern, Infallible> {
        self.bump(pattern_name(&node));
        fold::fold_pattern(self, node)
    }

    fn fold_type_param(&mut self, node: ast::TypeParam) -> Result<ast::TypeParam, Infallible> {
        self.bump(type_param_name(&node));
        fold::fold_type_param(self, node)
    }
}
