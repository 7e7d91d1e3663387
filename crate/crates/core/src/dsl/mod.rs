//! The short-code expression language.
//!
//! Short codes such as `DELAY(HIGH,1)-DELAY(EMA(CLOSE,13),1)` are parsed into an
//! [`Expr`] and evaluated over date-aligned [`Series`]. See [`eval`] for the
//! function semantics and [`parser`] for the grammar.

pub mod ast;
pub mod eval;
pub mod parser;

pub use ast::{BinOp, Expr, Func, Symbol, UnaryOp};
pub use eval::{evaluate, reduce, Env, EvalError, Series};
pub use parser::{parse, ParseError};

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn num(x: f64) -> Expr {
        Expr::Number(x)
    }

    fn term(s: Symbol) -> Expr {
        Expr::Terminal(s)
    }

    #[test]
    fn parses_bull_power() {
        let e = parse("DELAY(HIGH,1)-DELAY(EMA(CLOSE,13),1)").unwrap();
        let expected = Expr::binary(
            BinOp::Sub,
            Expr::call(Func::Delay, [term(Symbol::High), num(1.0)]),
            Expr::call(Func::Delay, [Expr::call(Func::Ema, [term(Symbol::Close), num(13.0)]), num(1.0)]),
        );
        assert_eq!(e, expected);
        assert_eq!(e.to_string(), "DELAY(HIGH,1)-DELAY(EMA(CLOSE,13),1)");
    }

    #[test]
    fn parses_terminal_and_whitespace() {
        assert_eq!(parse("CLOSE").unwrap(), term(Symbol::Close));
        assert_eq!(parse(" SMA( CLOSE ,\t5 ) ").unwrap(), parse("SMA(CLOSE,5)").unwrap());
    }

    #[test]
    fn precedence_and_power() {
        let e = parse("a").unwrap_err();
        assert_eq!(e, ParseError::UnknownSymbol("a".into()));
        let e = parse("-CLOSE**2").unwrap();
        assert_eq!(
            e,
            Expr::Unary(UnaryOp::Neg, alloc::boxed::Box::new(Expr::binary(BinOp::Pow, term(Symbol::Close), num(2.0))))
        );
        let e = parse("2**3**2").unwrap();
        assert_eq!(e, Expr::binary(BinOp::Pow, num(2.0), Expr::binary(BinOp::Pow, num(3.0), num(2.0))));
        let e = parse("CLOSE>OPEN+1").unwrap();
        assert_eq!(
            e,
            Expr::binary(BinOp::Gt, term(Symbol::Close), Expr::binary(BinOp::Add, term(Symbol::Open), num(1.0)))
        );
        assert_eq!(parse("1-2-3").unwrap().to_string(), "1-2-3");
        assert_eq!(parse("1-(2-3)").unwrap().to_string(), "1-(2-3)");
        assert_eq!(parse("(1-2)*3").unwrap().to_string(), "(1-2)*3");
        assert_eq!(parse("(CLOSE**2)**3").unwrap().to_string(), "(CLOSE**2)**3");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse("CLOSE $ 1"), Err(ParseError::Lex { position: 6, ch: '$' })));
        assert_eq!(parse("FOO(CLOSE)"), Err(ParseError::UnknownFunction("FOO".into())));
        assert!(matches!(parse("DELAY(CLOSE)"), Err(ParseError::Arity { function: Func::Delay, got: 1, .. })));
        assert!(matches!(parse("IF(CLOSE,1)"), Err(ParseError::Arity { function: Func::If, .. })));
        assert_eq!(parse("SMA(CLOSE,OPEN)"), Err(ParseError::NonLiteralWindow { function: Func::Sma }));
        assert_eq!(parse("SMA(CLOSE,2.5)"), Err(ParseError::NonLiteralWindow { function: Func::Sma }));
        assert_eq!(parse("SMA(CLOSE,0)"), Err(ParseError::NonLiteralWindow { function: Func::Sma }));
        assert_eq!(parse("EMA(CLOSE,N)"), Err(ParseError::NonLiteralWindow { function: Func::Ema }));
        assert!(matches!(parse("CLOSE+N"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("(CLOSE"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("CLOSE)"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
        assert!(parse("DELAY(CLOSE,0)").is_ok());
        assert!(parse("STD(PV,N)").is_ok());
    }

    fn env_close(values: &[f64]) -> Env {
        Env::new(values.len()).with(Symbol::Close, Series::from_values(values.iter().copied())).unwrap()
    }

    #[test]
    fn delay_zero_is_identity() {
        let env = env_close(&[1.0, 2.0, 3.0]);
        let s = evaluate(&parse("DELAY(CLOSE,0)").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![Some(1.0), Some(2.0), Some(3.0)]);
    }

    #[test]
    fn lagged_moving_average() {
        let env = env_close(&[10.0, 12.0, 14.0, 16.0]);
        let s = evaluate(&parse("SMA(DELAY(CLOSE,1),2)").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![None, None, Some(11.0), Some(13.0)]);
    }

    #[test]
    fn ema_recursion() {
        let env = env_close(&[1.0, 2.0, 3.0]);
        let s = evaluate(&parse("EMA(CLOSE,3)").unwrap(), &env).unwrap();
        // a = 0.5: 1, 1.5, 2.25
        assert_eq!(s.0, vec![Some(1.0), Some(1.5), Some(2.25)]);
    }

    #[test]
    fn division_by_zero_is_undefined() {
        let env = env_close(&[0.0, 1.0]);
        let s = evaluate(&parse("1/CLOSE").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![None, Some(1.0)]);
        let s = evaluate(&parse("CLOSE/CLOSE").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![None, Some(1.0)]);
        let s = evaluate(&parse("SQRT(CLOSE-1)").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![None, Some(0.0)]);
    }

    #[test]
    fn comparison_and_if() {
        let env = env_close(&[1.0, 3.0, 2.0]);
        let s = evaluate(&parse("IF(CLOSE>DELAY(CLOSE,1),1,0)").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![None, Some(1.0), Some(0.0)]);
        let s = evaluate(&parse("CLOSE<2").unwrap(), &env).unwrap();
        assert_eq!(s.0, vec![Some(1.0), Some(0.0), Some(0.0)]);
    }

    #[test]
    fn evaluation_errors() {
        let env = env_close(&[1.0]);
        assert_eq!(evaluate(&parse("OPEN").unwrap(), &env), Err(EvalError::UnboundSymbol(Symbol::Open)));
        let mut env = Env::new(2);
        let err = env.bind(Symbol::Close, Series::from_values([1.0])).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { expected: 2, got: 1, .. }));
    }

    fn env_pv(values: &[Option<f64>]) -> Env {
        Env::new(values.len()).with(Symbol::Pv, Series(values.to_vec())).unwrap()
    }

    #[test]
    fn reductions() {
        let env = env_pv(&[Some(0.0), Some(0.25), Some(0.1)]);
        assert_eq!(reduce(&parse("MAX(PV)").unwrap(), &env), Ok(0.25));
        assert_eq!(reduce(&parse("MIN(PV)").unwrap(), &env), Ok(0.0));

        let env = env_pv(&[None, Some(1.0), Some(2.0)]);
        assert_eq!(reduce(&parse("COUNT(PV)").unwrap(), &env), Ok(2.0));
        assert_eq!(reduce(&parse("SUM(PV)").unwrap(), &env), Ok(3.0));
        assert_eq!(reduce(&parse("MEAN(PV)").unwrap(), &env), Ok(1.5));

        let env = env_pv(&[Some(100.0), Some(105.0), Some(103.0)]);
        assert_eq!(reduce(&parse("FIRST(PV)").unwrap(), &env), Ok(100.0));
        assert_eq!(reduce(&parse("LAST(PV)").unwrap(), &env), Ok(103.0));
        assert_eq!(reduce(&parse("LAST(PV)/FIRST(PV)").unwrap(), &env), Ok(1.03));

        let env = env_pv(&[None, None]);
        assert_eq!(reduce(&parse("MEAN(PV)").unwrap(), &env), Err(EvalError::EmptyReduction(Func::Mean)));
        assert_eq!(reduce(&parse("COUNT(PV)").unwrap(), &env), Ok(0.0));
    }

    #[test]
    fn full_window_matches_reduction() {
        let env = env_pv(&[None, Some(0.01), Some(-0.01), Some(0.02)]);
        let a = reduce(&parse("STD(PV,N)").unwrap(), &env).unwrap();
        let b = reduce(&parse("STD(PV)").unwrap(), &env).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_detection() {
        for (src, scalar) in [
            ("MAX(PV)", true),
            ("STD(PV/DELAY(PV,1)-1,N)", true),
            ("(CASH_FINAL+POSITION_FINAL*LAST(CLOSE))/INITIAL_CAPITAL", true),
            ("SMA(CLOSE,5)", false),
            ("MAX(CLOSE,OPEN)", false),
            ("CLOSE-MEAN(CLOSE)", false),
            ("42", true),
        ] {
            assert_eq!(parse(src).unwrap().is_scalar(), scalar, "{src}");
        }
    }

    #[test]
    fn terminal_sets() {
        let e = parse("OPEN/SMA(DELAY(CLOSE,1),5)").unwrap();
        let t: Vec<Symbol> = e.terminals().into_iter().collect();
        assert_eq!(t, vec![Symbol::Open, Symbol::Close]);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            proptest::sample::select(Symbol::ALL.to_vec()).prop_map(Expr::Terminal),
            (0u32..1000).prop_map(|n| Expr::Number(f64::from(n) / 8.0)),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            let op = proptest::sample::select(vec![
                BinOp::Add,
                BinOp::Sub,
                BinOp::Mul,
                BinOp::Div,
                BinOp::Pow,
                BinOp::Gt,
                BinOp::Lt,
            ]);
            prop_oneof![
                (op, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
                inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Neg, alloc::boxed::Box::new(e))),
                (inner.clone(), 1u32..30).prop_map(|(e, n)| Expr::call(Func::Sma, [e, Expr::Number(f64::from(n))])),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::call(Func::Max, [a, b])),
                inner.clone().prop_map(|a| Expr::call(Func::Std, [a, Expr::FullWindow])),
                (inner.clone(), inner.clone(), inner).prop_map(|(c, a, b)| Expr::call(Func::If, [c, a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn canonical_render_round_trips(e in arb_expr()) {
            let text = e.to_string();
            prop_assert_eq!(parse(&text).unwrap(), e);
        }
    }
}
