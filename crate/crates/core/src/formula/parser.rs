//! Recursive-descent parser for model formulae.
//!
//! Binding, loosest first: `~`; `|`/`||` (only inside parentheses); `+`/`-`
//! (left-associative); `*`; `:`; `^`; calls and parenthesised groups.

use super::ast::{Arg, Expr, Formula, Func};
use super::token::{tokenize, Token, TokenKind};
use super::ParseError;

pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let tokens = tokenize(text)?;
    parse(&tokens, text.len())
}

/// Parses a token stream produced by [`tokenize`]. `source_len` is used to
/// report positions at end of input.
pub fn parse(tokens: &[Token], source_len: usize) -> Result<Formula, ParseError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        depth: 0,
        end: source_len,
    };
    let formula = p.formula()?;
    match p.peek() {
        None => Ok(formula),
        Some(t) => Err(p.unexpected(t)),
    }
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    /// Parenthesis nesting depth.
    depth: usize,
    end: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<TokenKind> {
        self.peek().map(|t| t.kind)
    }

    fn bump(&mut self) -> Option<&'t Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.position)
    }

    fn unexpected(&self, t: &Token) -> ParseError {
        match t.kind {
            TokenKind::RParen => ParseError::UnbalancedParentheses {
                position: t.position,
            },
            TokenKind::Bar | TokenKind::DoubleBar if self.depth == 0 => {
                ParseError::BarOutsideParentheses {
                    position: t.position,
                }
            }
            _ => ParseError::UnexpectedToken {
                found: t.text.clone(),
                position: t.position,
            },
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        if self.peek_kind() == Some(TokenKind::Tilde) {
            self.bump();
            let rhs = self.rhs()?;
            return Ok(Formula { lhs: None, rhs });
        }
        if self.peek().is_none() {
            return Err(ParseError::EmptyRhs);
        }
        let lhs = self.sum()?;
        match self.peek() {
            Some(t) if t.kind == TokenKind::Tilde => {
                self.bump();
            }
            Some(t) => return Err(self.unexpected(t)),
            None => return Err(ParseError::MissingTilde),
        }
        let rhs = self.rhs()?;
        Ok(Formula {
            lhs: Some(lhs),
            rhs,
        })
    }

    fn rhs(&mut self) -> Result<Expr, ParseError> {
        match self.peek_kind() {
            None => Err(ParseError::EmptyRhs),
            Some(TokenKind::RParen) | Some(TokenKind::Comma) if self.depth > 0 => {
                Err(ParseError::EmptyRhs)
            }
            _ => self.sum(),
        }
    }

    /// Called after consuming a binary operator: the next token must start an
    /// operand.
    fn expect_operand(&self, op: &Token) -> Result<(), ParseError> {
        match self.peek() {
            None => Err(ParseError::DanglingOperator {
                operator: op.text.clone(),
                position: op.position,
            }),
            Some(t)
                if t.kind.is_binary_operator()
                    && !(t.kind == TokenKind::Minus
                        && matches!(
                            op.kind,
                            TokenKind::Plus
                                | TokenKind::Minus
                                | TokenKind::Bar
                                | TokenKind::DoubleBar
                        )) =>
            {
                Err(ParseError::DanglingOperator {
                    operator: op.text.clone(),
                    position: op.position,
                })
            }
            Some(t)
                if matches!(
                    t.kind,
                    TokenKind::RParen | TokenKind::Comma | TokenKind::Tilde
                ) =>
            {
                Err(ParseError::DanglingOperator {
                    operator: op.text.clone(),
                    position: op.position,
                })
            }
            _ => Ok(()),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.signed()?;
        while let Some(op) = self.peek() {
            match op.kind {
                TokenKind::Plus | TokenKind::Minus => {
                    self.bump();
                    self.expect_operand(op)?;
                    let right = self.signed()?;
                    left = if op.kind == TokenKind::Plus {
                        Expr::sum(left, right)
                    } else {
                        Expr::diff(left, right)
                    };
                }
                _ => break,
            }
        }
        Ok(left)
    }

    fn signed(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(op) if op.kind == TokenKind::Minus => {
                self.bump();
                self.expect_operand(op)?;
                if self.peek_kind() == Some(TokenKind::Minus) {
                    return Err(ParseError::DanglingOperator {
                        operator: op.text.clone(),
                        position: op.position,
                    });
                }
                Ok(Expr::neg(self.cross()?))
            }
            Some(op) if op.kind.is_binary_operator() => Err(ParseError::DanglingOperator {
                operator: op.text.clone(),
                position: op.position,
            }),
            _ => self.cross(),
        }
    }

    fn cross(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.interact()?;
        while let Some(op) = self.peek() {
            if op.kind != TokenKind::Star {
                break;
            }
            self.bump();
            self.expect_operand(op)?;
            let right = self.interact()?;
            left = Expr::cross(left, right);
        }
        Ok(left)
    }

    fn interact(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.power()?;
        while let Some(op) = self.peek() {
            if op.kind != TokenKind::Colon {
                break;
            }
            self.bump();
            self.expect_operand(op)?;
            let right = self.power()?;
            left = Expr::interact(left, right);
        }
        Ok(left)
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(op) = self.peek() {
            if op.kind == TokenKind::Caret {
                self.bump();
                self.expect_operand(op)?;
                let exp = self.bump().expect("operand checked above");
                if exp.kind != TokenKind::Int {
                    return Err(ParseError::InvalidExponent {
                        text: exp.text.clone(),
                        position: exp.position,
                    });
                }
                let k: u32 = exp.text.parse().map_err(|_| ParseError::InvalidExponent {
                    text: exp.text.clone(),
                    position: exp.position,
                })?;
                if k < 2 {
                    return Err(ParseError::InvalidExponent {
                        text: exp.text.clone(),
                        position: exp.position,
                    });
                }
                return Ok(Expr::power(base, k));
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.bump() else {
            return Err(ParseError::EmptyRhs);
        };
        match tok.kind {
            TokenKind::Ident => {
                if self.peek_kind() == Some(TokenKind::LParen) {
                    let func =
                        Func::from_name(&tok.text).ok_or_else(|| ParseError::UnknownFunction {
                            name: tok.text.clone(),
                            position: tok.position,
                        })?;
                    let open = self.bump().expect("peeked");
                    let args = self.call_args(open)?;
                    Ok(Expr::call(func, args))
                } else {
                    Ok(Expr::Var(tok.text.clone()))
                }
            }
            TokenKind::Int => match tok.text.as_str() {
                "0" => Ok(Expr::Int(0)),
                "1" => Ok(Expr::Int(1)),
                _ => Err(ParseError::InvalidNumber {
                    text: tok.text.clone(),
                    position: tok.position,
                }),
            },
            TokenKind::LParen => self.parenthesised(tok),
            _ => Err(self.unexpected(tok)),
        }
    }

    fn parenthesised(&mut self, open: &Token) -> Result<Expr, ParseError> {
        if self.peek().is_none() {
            return Err(ParseError::UnbalancedParentheses {
                position: open.position,
            });
        }
        self.depth += 1;
        let inner = self.sum()?;
        let expr = match self.peek() {
            Some(bar) if matches!(bar.kind, TokenKind::Bar | TokenKind::DoubleBar) => {
                self.bump();
                self.expect_operand(bar)?;
                let grouping = self.sum()?;
                Expr::group(inner, grouping, bar.kind == TokenKind::Bar)
            }
            _ => inner,
        };
        self.close(open)?;
        self.depth -= 1;
        Ok(expr)
    }

    fn close(&mut self, open: &Token) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::RParen => {
                self.bump();
                Ok(())
            }
            None => Err(ParseError::UnbalancedParentheses {
                position: open.position,
            }),
            Some(t) => Err(self.unexpected(t)),
        }
    }

    fn call_args(&mut self, open: &Token) -> Result<Vec<Arg>, ParseError> {
        self.depth += 1;
        let mut args = Vec::new();
        if self.peek_kind() == Some(TokenKind::RParen) {
            self.bump();
            self.depth -= 1;
            return Ok(args);
        }
        loop {
            args.push(self.arg()?);
            match self.peek() {
                Some(t) if t.kind == TokenKind::Comma => {
                    self.bump();
                }
                _ => break,
            }
        }
        self.close(open)?;
        self.depth -= 1;
        Ok(args)
    }

    fn arg(&mut self) -> Result<Arg, ParseError> {
        let Some(tok) = self.peek() else {
            return Err(ParseError::UnbalancedParentheses { position: self.end });
        };
        match tok.kind {
            TokenKind::Tilde => {
                self.bump();
                let rhs = self.rhs()?;
                Ok(Arg::Formula(Box::new(Formula { lhs: None, rhs })))
            }
            TokenKind::Str => {
                self.bump();
                Ok(Arg::Str(tok.text.trim_matches('"').to_string()))
            }
            TokenKind::Int
                if matches!(
                    self.tokens.get(self.pos + 1).map(|t| t.kind),
                    Some(TokenKind::Comma) | Some(TokenKind::RParen)
                ) =>
            {
                self.bump();
                let v = tok.text.parse().map_err(|_| ParseError::InvalidNumber {
                    text: tok.text.clone(),
                    position: tok.position,
                })?;
                Ok(Arg::Expr(Expr::Int(v)))
            }
            TokenKind::Comma | TokenKind::RParen => Err(ParseError::UnexpectedToken {
                found: tok.text.clone(),
                position: self.here(),
            }),
            _ => Ok(Arg::Expr(self.sum()?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Formula {
        parse_formula(s).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    fn v(s: &str) -> Expr {
        Expr::var(s)
    }

    fn log(x: &str) -> Expr {
        Expr::call(Func::Log, vec![Arg::Expr(v(x))])
    }

    #[test]
    fn trees_formula() {
        let f = p("log(Volume) ~ 1 + log(Height) + log(Girth)");
        assert_eq!(f.lhs, Some(log("Volume")));
        assert_eq!(
            f.rhs,
            Expr::sum(Expr::sum(Expr::Int(1), log("Height")), log("Girth"))
        );
    }

    #[test]
    fn chick_grouped_term() {
        let f = p("weight ~ 1 + Time + Diet + (1 + Time | Chick)");
        let group = Expr::group(Expr::sum(Expr::Int(1), v("Time")), v("Chick"), true);
        assert_eq!(f.rhs.summands().last().copied(), Some(&group));
    }

    #[test]
    fn str_call_with_nested_formulas() {
        let f = p("~ str(~Chick + Chick:Time, ~diag(2):id(50))");
        assert!(f.lhs.is_none());
        let Expr::Call { func, args } = &f.rhs else {
            panic!("expected call")
        };
        assert_eq!(*func, Func::Str);
        assert_eq!(args.len(), 2);
        let Arg::Formula(second) = &args[1] else {
            panic!("expected formula arg")
        };
        assert_eq!(
            second.rhs,
            Expr::interact(
                Expr::call(Func::Diag, vec![Arg::Expr(Expr::Int(2))]),
                Expr::call(Func::Id, vec![Arg::Expr(Expr::Int(50))]),
            )
        );
    }

    #[test]
    fn at_with_string_argument() {
        let f = p(r#"~ at(site, "S1"):idv(rowf)"#);
        let factors = f.rhs.interaction_factors();
        assert_eq!(
            factors[0],
            &Expr::call(Func::At, vec![Arg::Expr(v("site")), Arg::Str("S1".into())])
        );
    }

    #[test]
    fn precedence() {
        assert_eq!(p("y ~ a + b:c"), p("y ~ a + (b:c)"));
        assert_eq!(
            p("y ~ a*b^2").rhs,
            Expr::cross(v("a"), Expr::power(v("b"), 2))
        );
        assert_eq!(
            p("y ~ a*b:c").rhs,
            Expr::cross(v("a"), Expr::interact(v("b"), v("c")))
        );
        assert_eq!(
            p("y ~ a - b + c").rhs,
            Expr::sum(Expr::diff(v("a"), v("b")), v("c"))
        );
        assert_eq!(
            p("y ~ -1:x").rhs,
            Expr::neg(Expr::interact(Expr::Int(1), v("x")))
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_formula("y ~ Time | Chick"),
            Err(ParseError::BarOutsideParentheses { position: 9 })
        ));
        assert!(matches!(
            parse_formula("y ~ (x + z"),
            Err(ParseError::UnbalancedParentheses { position: 4 })
        ));
        assert!(matches!(
            parse_formula("y ~ x + z)"),
            Err(ParseError::UnbalancedParentheses { position: 9 })
        ));
        assert!(matches!(
            parse_formula("y ~ x +"),
            Err(ParseError::DanglingOperator { position: 6, .. })
        ));
        assert!(matches!(
            parse_formula("y ~ x : * z"),
            Err(ParseError::DanglingOperator { position: 6, .. })
        ));
        assert!(matches!(parse_formula("y ~ "), Err(ParseError::EmptyRhs)));
        assert!(matches!(
            parse_formula("y ~ foo(x)"),
            Err(ParseError::UnknownFunction { ref name, position: 4 }) if name == "foo"
        ));
        assert!(matches!(
            parse_formula("y ~ 2 + x"),
            Err(ParseError::InvalidNumber { position: 4, .. })
        ));
        assert!(matches!(
            parse_formula("y ~ x^1"),
            Err(ParseError::InvalidExponent { position: 6, .. })
        ));
        assert!(matches!(
            parse_formula("y ~ (x | g | h)"),
            Err(ParseError::UnexpectedToken { position: 11, .. })
        ));
        assert!(matches!(
            parse_formula("y + x"),
            Err(ParseError::MissingTilde)
        ));
    }

    #[test]
    fn both_dialects_accepted() {
        p("yield ~ 0 + rep + (1 | gen) + (1 | rowf)");
        p("~ us(site):id(gen) + at(site, \"S1\"):idv(rowf)");
        p("~ at(site):ar1(colf):ar1(rowf)");
        p("~ giv(gen)");
        p("y ~ (0 + S1 + S2 || geno)");
    }

    #[test]
    fn display_round_trip_examples() {
        for src in [
            "log(Volume) ~ 1 + log(Height) + log(Girth)",
            "sqrt(Weight) ~ 1 + Block + Population*Herbicide",
            "y ~ (0 + x1 + x2 + x3)^3",
            "y ~ 1 + (-1 + x)",
            "~str(~Chick + Chick:Time, ~diag(2):id(50))",
            "weight ~ 1 + Time + Diet + (1 + Time || Chick)",
            "~at(site, \"S1\"):idv(rowf)",
        ] {
            let f = p(src);
            let printed = f.to_string();
            assert_eq!(p(&printed), f, "{src} -> {printed}");
        }
    }
}
