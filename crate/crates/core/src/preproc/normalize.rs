pub const NUMBER_TOKEN: &str = "<number>";
pub const STR_TOKEN: &str = "<str>";

/// Non-fatal issue found while normalizing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Warning {
    /// A `/*` with no closing `*/`; everything after it was dropped.
    UnterminatedComment { line: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub warnings: Vec<Warning>,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Strips comments, blank lines and non-ASCII characters, and replaces string
/// literals with `<str>` and numeric or character literals with `<number>`.
///
/// Comments become a single space so that the tokens on either side stay
/// apart. Trailing whitespace is trimmed from every line.
pub fn normalize_source(code: &str) -> Normalized {
    let chars: Vec<char> = code.chars().filter(char::is_ascii).collect();
    let n = chars.len();
    let mut out = String::with_capacity(n);
    let mut warnings = Vec::new();
    let mut line = 1;
    let mut i = 0;

    while i < n {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            '/' if next == Some('/') => {
                while i < n && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if next == Some('*') => {
                let start_line = line;
                let mut j = i + 2;
                while j + 1 < n && !(chars[j] == '*' && chars[j + 1] == '/') {
                    j += 1;
                }
                line += chars[i..j.min(n)].iter().filter(|&&c| c == '\n').count();
                if j + 1 < n {
                    out.push(' ');
                    i = j + 2;
                } else {
                    warnings.push(Warning::UnterminatedComment { line: start_line });
                    i = n;
                }
            }
            '"' | '\'' => {
                let mut j = i + 1;
                while j < n && chars[j] != c && chars[j] != '\n' {
                    j += if chars[j] == '\\' && j + 1 < n && chars[j + 1] != '\n' { 2 } else { 1 };
                }
                out.push_str(if c == '"' { STR_TOKEN } else { NUMBER_TOKEN });
                i = if j < n && chars[j] == c { j + 1 } else { j.min(n) };
            }
            _ if starts_number(&chars, i, out.chars().last()) => {
                let mut j = i;
                while j < n {
                    let d = chars[j];
                    let exponent_sign = (d == '+' || d == '-')
                        && matches!(chars[j - 1], 'e' | 'E' | 'p' | 'P')
                        && !is_hex_prefix(&chars[i..j]);
                    if is_ident_char(d) || d == '.' || exponent_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                out.push_str(NUMBER_TOKEN);
                i = j;
            }
            _ => {
                if c == '\n' {
                    line += 1;
                }
                out.push(c);
                i += 1;
            }
        }
    }

    let text = out
        .split('\n')
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    Normalized { text, warnings }
}

fn starts_number(chars: &[char], i: usize, prev: Option<char>) -> bool {
    if prev.is_some_and(is_ident_char) {
        return false;
    }
    let c = chars[i];
    c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit))
}

fn is_hex_prefix(lit: &[char]) -> bool {
    lit.len() >= 2 && lit[0] == '0' && matches!(lit[1], 'x' | 'X')
}
