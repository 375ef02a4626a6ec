use super::normalize::{NUMBER_TOKEN, STR_TOKEN};

const MULTI_CHAR_OPS: &[&str] = &[
    "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=",
];

fn sentinel_at(s: &str) -> Option<&'static str> {
    [NUMBER_TOKEN, STR_TOKEN].into_iter().find(|t| s.starts_with(t))
}

/// Splits one statement into code tokens.
///
/// Identifiers, `<number>`/`<str>` and multi-character operators are atomic;
/// other punctuation is one token per character. Whitespace and commas only
/// separate tokens.
pub fn tokenize_statement(stmt: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < stmt.len() {
        let rest = &stmt[i..];
        let c = rest.chars().next().expect("non-empty");
        if c.is_whitespace() || c == ',' {
            i += c.len_utf8();
            continue;
        }
        if let Some(s) = sentinel_at(rest) {
            tokens.push(s.to_owned());
            i += s.len();
            continue;
        }
        if c.is_ascii_alphanumeric() || c == '_' {
            let numeric = c.is_ascii_digit();
            let len = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_' || (numeric && ch == '.')))
                .unwrap_or(rest.len());
            tokens.push(rest[..len].to_owned());
            i += len;
            continue;
        }
        // An operator never swallows the first character of a sentinel:
        // `x<<number>` is `x`, `<`, `<number>`.
        let op = MULTI_CHAR_OPS
            .iter()
            .find(|op| rest.starts_with(**op) && (1..op.len()).all(|k| sentinel_at(&rest[k..]).is_none()));
        match op {
            Some(op) => {
                tokens.push((*op).to_owned());
                i += op.len();
            }
            None => {
                tokens.push(c.to_string());
                i += c.len_utf8();
            }
        }
    }
    tokens
}

/// Splits normalized code into statements. A statement ends at `;`, `{` or
/// `}` outside parentheses, so `for(a;b;c){` stays whole. Terminators are
/// kept; surrounding whitespace is trimmed and empty statements dropped.
pub fn split_statements(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut depth = 0usize;
    for c in code.chars() {
        current.push(c);
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ';' | '{' | '}' if depth == 0 => {
                let stmt = current.trim();
                if !stmt.is_empty() {
                    out.push(stmt.to_owned());
                }
                current.clear();
            }
            _ => {}
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        out.push(tail.to_owned());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize_statement(s)
    }

    #[test]
    fn worked_example() {
        let expected = [
            "if", "(", "func2", "(", "func3", "(", "number", "number", ")", "&", "var2", ")", "!=",
            "var10", ")",
        ];
        assert_eq!(toks("if(func2(func3(number,number),&var2)!=var10)"), expected);
    }

    #[test]
    fn empty_statement() {
        assert!(toks("").is_empty());
        assert!(toks("  ,  ").is_empty());
    }

    #[test]
    fn operator_before_sentinel() {
        assert_eq!(toks("var1<=<number>;"), ["var1", "<=", "<number>", ";"]);
        assert_eq!(toks("var1<<number>"), ["var1", "<", "<number>"]);
        assert_eq!(toks("a<<=b->c"), ["a", "<<=", "b", "->", "c"]);
    }

    #[test]
    fn statement_splitting() {
        assert_eq!(split_statements("int var1; var1=<number>;").len(), 2);
        assert_eq!(
            split_statements("for(var1=<number>;var1<var2;var1++){"),
            ["for(var1=<number>;var1<var2;var1++){"]
        );
        assert!(split_statements("").is_empty());
        assert_eq!(
            split_statements("if(a) {\n b;\n}\n"),
            ["if(a) {", "b;", "}"]
        );
    }

    proptest! {
        #[test]
        fn rejoining_is_stable(s in "[a-z0-9_<>=!&|+\\-*/%^(){};,. \\[\\]]{0,60}") {
            let first = tokenize_statement(&s);
            let second = tokenize_statement(&first.join(" "));
            prop_assert_eq!(&first, &second);
            prop_assert!(first.iter().all(|t| !t.chars().any(char::is_whitespace)));
        }

        #[test]
        fn rejoining_is_stable_with_sentinels(
            parts in prop::collection::vec(
                prop::sample::select(vec!["<number>", "<str>", "<", "<<", "=", "var1", "(", ")", ">", ">="]),
                0..20,
            )
        ) {
            let s = parts.concat();
            let first = tokenize_statement(&s);
            prop_assert_eq!(&first, &tokenize_statement(&first.join(" ")));
        }
    }
}
