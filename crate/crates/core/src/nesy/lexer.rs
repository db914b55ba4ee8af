use super::{KbError, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Number(f64),
    Axiom,
    And,
    Or,
    Not,
    Implies,
    LParen,
    RParen,
    Comma,
    Colon,
    Semi,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(v) => format!("number {v}"),
            Tok::Axiom => "`axiom`".into(),
            Tok::And => "`AND`".into(),
            Tok::Or => "`OR`".into(),
            Tok::Not => "`NOT`".into(),
            Tok::Implies => "`IMPLIES`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Token>, tok| {
            out.push(Token {
                tok,
                line: start_line,
                col: start_col,
            })
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' | ')' | ',' | ':' | ';' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    _ => Tok::Semi,
                };
                push(&mut out, tok);
                i += 1;
                col += 1;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let s: String = chars[i..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                    .collect();
                i += s.len();
                col += s.len();
                let tok = match s.as_str() {
                    "axiom" => Tok::Axiom,
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    "IMPLIES" => Tok::Implies,
                    _ => Tok::Ident(s),
                };
                push(&mut out, tok);
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                let len = number_len(&chars[i..]);
                if len == 0 {
                    return Err(KbError::Parse {
                        line,
                        col,
                        message: format!("unexpected character `{c}`"),
                    });
                }
                let s: String = chars[i..i + len].iter().collect();
                let v: f64 = s.parse().map_err(|_| KbError::Parse {
                    line,
                    col,
                    message: format!("malformed number `{s}`"),
                })?;
                push(&mut out, Tok::Number(v));
                i += len;
                col += len;
            }
            other => {
                return Err(KbError::Parse {
                    line,
                    col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Length of the longest prefix matching
/// `[+-]? (digits ('.' digits?)? | '.' digits) ([eE] [+-]? digits)?`.
fn number_len(s: &[char]) -> usize {
    let mut i = 0;
    if matches!(s.first(), Some('+' | '-')) {
        i += 1;
    }
    let int_start = i;
    while i < s.len() && s[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < s.len() && s[i] == '.' {
        i += 1;
        let frac_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return 0;
    }
    if i < s.len() && (s[i] == 'e' || s[i] == 'E') {
        let mut j = i + 1;
        if j < s.len() && (s[j] == '+' || s[j] == '-') {
            j += 1;
        }
        let exp_start = j;
        while j < s.len() && s[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers() {
        assert_eq!(
            toks("-1.5 2 .5 1e-3 +4.0E2"),
            vec![
                Tok::Number(-1.5),
                Tok::Number(2.0),
                Tok::Number(0.5),
                Tok::Number(1e-3),
                Tok::Number(400.0),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_and_positions() {
        let t = tokenize("# header\n  axiom a1:\n").unwrap();
        assert_eq!(t[0].tok, Tok::Axiom);
        assert_eq!((t[0].line, t[0].col), (2, 3));
        assert_eq!(t[1].tok, Tok::Ident("a1".into()));
        assert_eq!((t[1].line, t[1].col), (2, 9));
    }

    #[test]
    fn stray_characters() {
        assert!(matches!(tokenize("axiom $"), Err(KbError::Parse { line: 1, col: 7, .. })));
        assert!(tokenize("-").is_err());
    }
}
