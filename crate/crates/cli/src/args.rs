use std::path::PathBuf;

/// Overrides and positional arguments split out of the raw argument tail.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Tail {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub positional: Vec<String>,
}

/// Reads `--key value`, `--key=value` and bare `--flag` (meaning `true`).
/// `--config` is pulled out separately; anything not starting with `--` is
/// positional.
pub fn split_tail(args: &[String]) -> Result<Tail, String> {
    let mut tail = Tail::default();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        i += 1;
        let Some(flag) = arg.strip_prefix("--") else {
            tail.positional.push(arg.clone());
            continue;
        };
        if flag.is_empty() {
            tail.positional.extend(args[i..].iter().cloned());
            break;
        }
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => match args.get(i) {
                Some(next) if !next.starts_with("--") => {
                    i += 1;
                    (flag.to_string(), next.clone())
                }
                _ => (flag.to_string(), "true".to_string()),
            },
        };
        if key.is_empty() {
            return Err(format!("malformed option `{arg}`"));
        }
        if key == "config" {
            tail.config = Some(PathBuf::from(value));
        } else {
            tail.overrides.push((key, value));
        }
    }
    Ok(tail)
}
