use super::{ArchSpec, Group, LayerSpec, ALLOWED_KERNELS};
use crate::error::{Error, Result};
use crate::tensor::ImageShape;

#[derive(Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl Token<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }

    fn count(&self, what: &str) -> Result<usize> {
        self.text
            .parse()
            .map_err(|_| self.error(format!("expected {what} (a non-negative integer), found `{}`", self.text)))
    }
}

fn tokenize(line: &str, line_no: usize) -> Vec<Token<'_>> {
    let body = line.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices().chain(std::iter::once((body.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                tokens.push(Token {
                    text: &body[s..i],
                    line: line_no,
                    column: body[..s].chars().count() + 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    tokens
}

/// Positional counts followed by optional `s<int>` / `p<value>` flags.
struct Args<'a> {
    keyword: Token<'a>,
    rest: &'a [Token<'a>],
    next: usize,
    stride: Option<usize>,
    p: Option<Token<'a>>,
}

impl<'a> Args<'a> {
    fn new(tokens: &'a [Token<'a>], positional: usize, flags: &str) -> Result<Self> {
        let keyword = tokens[0];
        let rest = &tokens[1..];
        let mut args = Args {
            keyword,
            rest,
            next: 0,
            stride: None,
            p: None,
        };
        for (i, t) in rest.iter().enumerate() {
            if i < positional {
                if t.text.starts_with(|c: char| c.is_ascii_alphabetic()) {
                    return Err(t.error(format!("`{}` needs {positional} numeric argument(s) before flags", keyword.text)));
                }
                continue;
            }
            let (flag, value) = t.text.split_at(t.text.chars().next().map_or(0, char::len_utf8));
            let value_tok = Token {
                text: value,
                column: t.column + 1,
                ..*t
            };
            match flag {
                "s" if flags.contains('s') => {
                    if args.stride.replace(value_tok.count("stride")?).is_some() {
                        return Err(t.error("duplicate stride flag"));
                    }
                }
                "p" if flags.contains('p') => {
                    if args.p.replace(value_tok).is_some() {
                        return Err(t.error("duplicate `p` flag"));
                    }
                }
                _ => return Err(t.error(format!("unexpected argument `{}` for `{}`", t.text, keyword.text))),
            }
        }
        if rest.len() < positional {
            let col = rest.last().map_or(keyword.column + keyword.text.len(), |t| t.column + t.text.len());
            return Err(Error::Parse {
                line: keyword.line,
                column: col,
                message: format!("`{}` needs {positional} numeric argument(s)", keyword.text),
            });
        }
        Ok(args)
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let t = self.rest[self.next];
        self.next += 1;
        t.count(what)
    }

    fn probability(&self, default: Option<f64>) -> Result<f64> {
        match self.p {
            Some(t) => {
                let p: f64 = t.text.parse().map_err(|_| t.error(format!("bad probability `{}`", t.text)))?;
                if !(0.0..1.0).contains(&p) {
                    return Err(t.error(format!("probability {p} outside [0, 1)")));
                }
                Ok(p)
            }
            None => default.ok_or_else(|| self.keyword.error(format!("`{}` needs a probability flag p<value>", self.keyword.text))),
        }
    }

    fn pad(&self, default: usize) -> Result<usize> {
        self.p.map_or(Ok(default), |t| t.count("padding"))
    }
}

fn positive(t: &Token<'_>, v: usize, what: &str) -> Result<usize> {
    if v == 0 {
        Err(t.error(format!("{what} must be >= 1")))
    } else {
        Ok(v)
    }
}

fn layer(tokens: &[Token<'_>]) -> Result<LayerSpec> {
    let kw = tokens[0];
    let bare = |spec: LayerSpec| {
        if let Some(extra) = tokens.get(1) {
            Err(extra.error(format!("`{}` takes no arguments", kw.text)))
        } else {
            Ok(spec)
        }
    };
    match kw.text {
        "conv" | "sconv" => {
            let mut a = Args::new(tokens, 2, "sp")?;
            let kernel = a.count("kernel size")?;
            if !ALLOWED_KERNELS.contains(&kernel) {
                return Err(tokens[1].error(format!("kernel {kernel} not allowed (use one of {ALLOWED_KERNELS:?})")));
            }
            let out = positive(&tokens[2], a.count("output channels")?, "output channels")?;
            let default_stride = if kw.text == "sconv" { 2 } else { 1 };
            let stride = positive(&kw, a.stride.unwrap_or(default_stride), "stride")?;
            let pad = a.pad((kernel - 1) / 2)?;
            Ok(if kw.text == "conv" {
                LayerSpec::Conv { kernel, out, stride, pad }
            } else {
                LayerSpec::SConv { kernel, out, stride, pad }
            })
        }
        "maxpool" => {
            let mut a = Args::new(tokens, 1, "s")?;
            let window = positive(&tokens[1], a.count("window")?, "window")?;
            let stride = positive(&kw, a.stride.unwrap_or(window), "stride")?;
            Ok(LayerSpec::MaxPool { window, stride })
        }
        "safpool" => {
            let mut a = Args::new(tokens, 1, "sp")?;
            let window = positive(&tokens[1], a.count("window")?, "window")?;
            let stride = positive(&kw, a.stride.unwrap_or(window), "stride")?;
            let p = a.probability(Some(crate::layers::SafPoolConfig::default().drop_p))?;
            Ok(LayerSpec::SafPool { window, stride, p })
        }
        "dropout" => {
            let a = Args::new(tokens, 0, "p")?;
            Ok(LayerSpec::Dropout { p: a.probability(None)? })
        }
        "dense" => {
            let mut a = Args::new(tokens, 1, "")?;
            let units = positive(&tokens[1], a.count("units")?, "units")?;
            Ok(LayerSpec::Dense { units })
        }
        "bn" => bare(LayerSpec::BatchNorm),
        "relu" => bare(LayerSpec::Relu),
        "gap" => bare(LayerSpec::GlobalAvgPool),
        "gmp" => bare(LayerSpec::GlobalMaxPool),
        "flatten" => bare(LayerSpec::Flatten),
        other => Err(kw.error(format!("unknown keyword `{other}`"))),
    }
}

fn structural(t: &Token<'_>, message: impl std::fmt::Display) -> Error {
    Error::Validation(format!("line {}: {message}", t.line))
}

/// Parses the line format into a validated [`ArchSpec`].
pub fn parse(text: &str) -> Result<ArchSpec> {
    let mut name = String::new();
    let mut input: Option<ImageShape> = None;
    let mut groups: Vec<Group> = Vec::new();
    let mut tail: Vec<LayerSpec> = Vec::new();
    let mut seen_layer_or_group = false;

    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line, i + 1);
        let Some(kw) = tokens.first() else { continue };
        match kw.text {
            "name" => {
                if input.is_some() || !name.is_empty() {
                    return Err(kw.error("`name` must be the first directive and appear once"));
                }
                match tokens.as_slice() {
                    [_, n] => name = n.text.to_string(),
                    [_] => return Err(kw.error("`name` needs a value")),
                    [_, _, extra, ..] => return Err(extra.error("names cannot contain spaces")),
                    [] => unreachable!(),
                }
            }
            "input" => {
                if input.is_some() || seen_layer_or_group {
                    return Err(kw.error("`input` must come before any group and appear once"));
                }
                if tokens.len() != 4 {
                    let at = tokens.get(4).unwrap_or(kw);
                    return Err(at.error("`input` takes exactly three counts: c h w"));
                }
                let dim = |t: &Token<'_>| t.count("dimension").and_then(|v| positive(t, v, "input dimension"));
                input = Some(ImageShape::new(dim(&tokens[1])?, dim(&tokens[2])?, dim(&tokens[3])?));
            }
            "group" => {
                if input.is_none() {
                    return Err(structural(kw, "`group` before `input`"));
                }
                if !tail.is_empty() {
                    return Err(structural(kw, "`group` after the classifier tail began"));
                }
                let gname = match tokens.as_slice() {
                    [_, n] => n.text.to_string(),
                    [_] => return Err(kw.error("`group` needs a name")),
                    [_, _, extra, ..] => return Err(extra.error("group names cannot contain spaces")),
                    [] => unreachable!(),
                };
                seen_layer_or_group = true;
                groups.push(Group {
                    name: gname,
                    layers: Vec::new(),
                });
            }
            _ => {
                let spec = layer(&tokens)?;
                if input.is_none() {
                    return Err(structural(kw, "layer before `input`"));
                }
                seen_layer_or_group = true;
                if !tail.is_empty() || spec.starts_tail() {
                    tail.push(spec);
                } else if let Some(g) = groups.last_mut() {
                    g.layers.push(spec);
                } else {
                    return Err(structural(kw, format!("`{}` outside any group", kw.text)));
                }
            }
        }
    }
    let input = input.ok_or_else(|| Error::Validation("missing `input c h w` line".into()))?;
    let spec = ArchSpec {
        name,
        input,
        groups,
        tail,
    };
    spec.validate()?;
    Ok(spec)
}
