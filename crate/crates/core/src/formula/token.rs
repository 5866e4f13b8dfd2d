use std::fmt;

use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Ident,
    Int,
    /// Double-quoted string literal; `text` keeps the quotes.
    Str,
    Tilde,
    Plus,
    Minus,
    Colon,
    Star,
    Caret,
    Bar,
    DoubleBar,
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    pub fn is_binary_operator(self) -> bool {
        matches!(
            self,
            TokenKind::Plus
                | TokenKind::Minus
                | TokenKind::Colon
                | TokenKind::Star
                | TokenKind::Caret
                | TokenKind::Bar
                | TokenKind::DoubleBar
        )
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Ident => "identifier",
            TokenKind::Int => "integer",
            TokenKind::Str => "string",
            TokenKind::Tilde => "`~`",
            TokenKind::Plus => "`+`",
            TokenKind::Minus => "`-`",
            TokenKind::Colon => "`:`",
            TokenKind::Star => "`*`",
            TokenKind::Caret => "`^`",
            TokenKind::Bar => "`|`",
            TokenKind::DoubleBar => "`||`",
            TokenKind::LParen => "`(`",
            TokenKind::RParen => "`)`",
            TokenKind::Comma => "`,`",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offset of the first character in the source.
    pub position: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

/// Splits formula source into tokens. Whitespace is skipped; `||` is matched
/// before `|`.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();

    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }

        let single = |kind| Token {
            kind,
            text: c.to_string(),
            position: pos,
        };

        let token = match c {
            '~' => {
                chars.next();
                single(TokenKind::Tilde)
            }
            '+' => {
                chars.next();
                single(TokenKind::Plus)
            }
            '-' => {
                chars.next();
                single(TokenKind::Minus)
            }
            ':' => {
                chars.next();
                single(TokenKind::Colon)
            }
            '*' => {
                chars.next();
                single(TokenKind::Star)
            }
            '^' => {
                chars.next();
                single(TokenKind::Caret)
            }
            '(' => {
                chars.next();
                single(TokenKind::LParen)
            }
            ')' => {
                chars.next();
                single(TokenKind::RParen)
            }
            ',' => {
                chars.next();
                single(TokenKind::Comma)
            }
            '|' => {
                chars.next();
                if matches!(chars.peek(), Some(&(_, '|'))) {
                    chars.next();
                    Token {
                        kind: TokenKind::DoubleBar,
                        text: "||".to_string(),
                        position: pos,
                    }
                } else {
                    single(TokenKind::Bar)
                }
            }
            '"' => {
                chars.next();
                let mut end = None;
                for (p, ch) in chars.by_ref() {
                    if ch == '"' {
                        end = Some(p);
                        break;
                    }
                }
                let end = end.ok_or(ParseError::UnterminatedString { position: pos })?;
                Token {
                    kind: TokenKind::Str,
                    text: text[pos..=end].to_string(),
                    position: pos,
                }
            }
            c if c.is_ascii_digit() => {
                let mut end = pos;
                while let Some(&(p, ch)) = chars.peek() {
                    if !ch.is_ascii_digit() {
                        break;
                    }
                    end = p + ch.len_utf8();
                    chars.next();
                }
                Token {
                    kind: TokenKind::Int,
                    text: text[pos..end].to_string(),
                    position: pos,
                }
            }
            c if is_ident_start(c) => {
                let mut end = pos;
                while let Some(&(p, ch)) = chars.peek() {
                    if !is_ident_continue(ch) {
                        break;
                    }
                    end = p + ch.len_utf8();
                    chars.next();
                }
                Token {
                    kind: TokenKind::Ident,
                    text: text[pos..end].to_string(),
                    position: pos,
                }
            }
            other => {
                return Err(ParseError::UnexpectedCharacter {
                    character: other,
                    position: pos,
                })
            }
        };
        tokens.push(token);
    }

    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<TokenKind> {
        tokenize(s).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn simple_formula() {
        use TokenKind::*;
        assert_eq!(kinds("y ~ 1 + x"), vec![Ident, Tilde, Int, Plus, Ident]);
        let toks = tokenize("y ~ 1 + x").unwrap();
        assert_eq!(toks[0].text, "y");
        assert_eq!(toks[4].position, 8);
    }

    #[test]
    fn double_bar_is_one_token() {
        let toks = tokenize("(1 + Time || Chick)").unwrap();
        let bars: Vec<_> = toks
            .iter()
            .filter(|t| matches!(t.kind, TokenKind::Bar | TokenKind::DoubleBar))
            .collect();
        assert_eq!(bars.len(), 1);
        assert_eq!(bars[0].kind, TokenKind::DoubleBar);
        assert_eq!(toks[toks.len() - 2].text, "Chick");
        assert_eq!(toks.last().unwrap().kind, TokenKind::RParen);
    }

    #[test]
    fn unexpected_character() {
        assert_eq!(
            tokenize("y ~ x ?"),
            Err(ParseError::UnexpectedCharacter {
                character: '?',
                position: 6
            })
        );
    }

    #[test]
    fn string_literal_keeps_quotes() {
        let toks = tokenize(r#"at(site, "S1")"#).unwrap();
        assert_eq!(toks[4].kind, TokenKind::Str);
        assert_eq!(toks[4].text, "\"S1\"");
        assert!(matches!(
            tokenize(r#"at(site, "S1)"#),
            Err(ParseError::UnterminatedString { position: 9 })
        ));
    }

    #[test]
    fn concatenation_reproduces_input() {
        let src = "log(Volume) ~ 1 + log(Height)+log(Girth) + (0 + x || g)";
        let joined: String = tokenize(src)
            .unwrap()
            .iter()
            .map(|t| t.text.as_str())
            .collect();
        let stripped: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined, stripped);
    }
}
