use super::CmpOp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Token {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Assign,
    Dot,
    Op(CmpOp),
}

impl Token {
    pub(crate) fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("`{s}`"),
            Token::Int(i) => format!("integer {i}"),
            Token::Str(_) => "string literal".to_owned(),
            Token::LParen => "`(`".to_owned(),
            Token::RParen => "`)`".to_owned(),
            Token::Comma => "`,`".to_owned(),
            Token::Assign => "`=`".to_owned(),
            Token::Dot => "`.`".to_owned(),
            Token::Op(op) => format!("`{}`", op.as_str()),
        }
    }
}

/// Splits one source line (indentation already removed) into tokens.
pub(crate) fn lex_line(src: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        match c {
            ' ' | '\t' => {
                chars.next();
            }
            '(' | ')' | ',' | '.' => {
                chars.next();
                tokens.push(match c {
                    '(' => Token::LParen,
                    ')' => Token::RParen,
                    ',' => Token::Comma,
                    _ => Token::Dot,
                });
            }
            '=' | '!' | '<' | '>' => {
                chars.next();
                let eq = matches!(chars.peek(), Some(&(_, '=')));
                if eq {
                    chars.next();
                }
                tokens.push(match (c, eq) {
                    ('=', false) => Token::Assign,
                    ('=', true) => Token::Op(CmpOp::Eq),
                    ('!', true) => Token::Op(CmpOp::Ne),
                    ('!', false) => return Err("unexpected character `!`".to_owned()),
                    ('<', false) => Token::Op(CmpOp::Lt),
                    ('<', true) => Token::Op(CmpOp::Le),
                    ('>', false) => Token::Op(CmpOp::Gt),
                    _ => Token::Op(CmpOp::Ge),
                });
            }
            '"' => {
                chars.next();
                let mut value = String::new();
                let mut closed = false;
                while let Some((_, c)) = chars.next() {
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some((_, '"')) => value.push('"'),
                            Some((_, '\\')) => value.push('\\'),
                            Some((_, 'n')) => value.push('\n'),
                            Some((_, 't')) => value.push('\t'),
                            Some((_, other)) => {
                                return Err(format!("unknown escape sequence `\\{other}`"))
                            }
                            None => break,
                        },
                        _ => value.push(c),
                    }
                }
                if !closed {
                    return Err("unterminated string literal".to_owned());
                }
                tokens.push(Token::Str(value));
            }
            c if c == '-' || c.is_ascii_digit() => {
                chars.next();
                let mut end = start + c.len_utf8();
                while let Some(&(i, d)) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    end = i + 1;
                    chars.next();
                }
                let text = &src[start..end];
                let value = text
                    .parse::<i64>()
                    .map_err(|_| format!("malformed integer `{text}`"))?;
                tokens.push(Token::Int(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = start;
                while let Some(&(i, d)) = chars.peek() {
                    if !(d.is_ascii_alphanumeric() || d == '_') {
                        break;
                    }
                    end = i + 1;
                    chars.next();
                }
                tokens.push(Token::Ident(src[start..end].to_owned()));
            }
            other => return Err(format!("unexpected character `{other}`")),
        }
    }
    Ok(tokens)
}
