//! On-disk formats: checkpoints, vocabularies, tagger weights, triplet
//! JSONL, labeled TSV and metrics logs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::encoder::{Encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::objectives::LossWeights;
use crate::perturb::TripletExample;
use crate::textproc::{Tag, TaggerModel, Vocab, NUM_SPECIAL};
use crate::trainer::{
    Classifier, ClassifierHead, LabeledExample, OptimState, PretrainState, StepLosses,
};

const MAGIC: &str = "semcontrast-checkpoint 1";
const END: &str = "end";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Named tensors plus string metadata. The file is a text manifest
/// (`meta`/`tensor` lines, terminated by `end`) followed by the
/// little-endian `f64` payload; tensor lines record shape and byte offset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn shape_text(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\n");
        for (k, v) in &self.meta {
            head.push_str(&format!("meta\t{k}\t{v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            head.push_str(&format!(
                "tensor\t{name}\t{}\t{offset}\n",
                shape_text(t.shape())
            ));
            offset += 8 * t.len();
        }
        head.push_str(END);
        head.push('\n');
        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Checkpoint> {
        let bad = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut pos = 0usize;
        let mut next_line = |what: &str| -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
                Error::Checkpoint(format!("{origin}: truncated manifest while reading {what}"))
            })?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::Checkpoint(format!("{origin}: manifest is not UTF-8")))?;
            pos += end + 1;
            Ok(line)
        };
        if next_line("header")? != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{origin}: not a checkpoint (bad header)"
            )));
        }
        let mut meta = BTreeMap::new();
        let mut entries: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut line_no = 1;
        loop {
            line_no += 1;
            let line = next_line("manifest")?;
            if line == END {
                break;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["meta", k, v] => {
                    meta.insert(k.to_string(), v.to_string());
                }
                ["tensor", name, shape, offset] => {
                    let shape = if shape.is_empty() {
                        Vec::new()
                    } else {
                        shape
                            .split(',')
                            .map(str::parse)
                            .collect::<std::result::Result<Vec<usize>, _>>()
                            .map_err(|_| bad(line_no, format!("bad shape `{shape}`")))?
                    };
                    let offset = offset
                        .parse()
                        .map_err(|_| bad(line_no, format!("bad offset `{offset}`")))?;
                    entries.push((name.to_string(), shape, offset));
                }
                _ => return Err(bad(line_no, format!("unrecognized manifest line `{line}`"))),
            }
        }
        let payload = &bytes[pos..];
        let mut expected = 0usize;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset) in entries {
            if offset != expected {
                return Err(Error::Checkpoint(format!(
                    "{origin}: tensor {name} at byte {offset}, expected {expected} (overlapping or gapped manifest)"
                )));
            }
            let n: usize = shape.iter().product();
            let end = offset + 8 * n;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "{origin}: payload too short for tensor {name}"
                )));
            }
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
            expected = end;
        }
        if expected != payload.len() {
            return Err(Error::Checkpoint(format!(
                "{origin}: payload holds {} bytes, manifest accounts for {expected}",
                payload.len()
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key}")))
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata {key} has bad value `{raw}`")))
    }

    pub fn kind(&self) -> Result<&str> {
        self.meta("kind")
    }

    fn put_config(&mut self, config: &RunConfig) {
        for (k, v) in config.entries() {
            self.meta.insert(format!("config.{k}"), v);
        }
    }

    /// The run configuration snapshot stored with the checkpoint.
    pub fn run_config(&self) -> Result<RunConfig> {
        let text: String = self
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| format!("{k} = {v}\n")))
            .collect();
        RunConfig::parse(&text)
    }

    fn put_encoder(&mut self, params: &EncoderParams) {
        self.tensors.extend(
            params
                .named()
                .into_iter()
                .map(|(n, t)| (format!("encoder.{n}"), t.clone())),
        );
    }

    /// Encoder weights and configuration from any checkpoint kind.
    pub fn encoder(&self) -> Result<Encoder> {
        let config = self.run_config()?.encoder;
        let names = EncoderParams::init(
            &EncoderConfig {
                init_std: 0.0,
                ..config.clone()
            },
            0,
        )?;
        let values = names
            .named()
            .into_iter()
            .map(|(n, _)| self.tensor(&format!("encoder.{n}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        let params = EncoderParams::from_values(config.n_layers, values).ok_or_else(|| {
            Error::Checkpoint("encoder tensors do not match the layer count".into())
        })?;
        params.check_shapes(&config)?;
        Ok(Encoder { config, params })
    }

    /// Full pre-training state, including optimizer moments, so training
    /// resumes exactly.
    pub fn from_pretrain(state: &PretrainState, config: &RunConfig) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("kind".into(), "pretrain".into());
        ck.meta.insert("step".into(), state.step.to_string());
        ck.meta.insert("adam.t".into(), state.optim.t.to_string());
        let mut cfg = config.clone();
        cfg.encoder = state.config.clone();
        ck.put_config(&cfg);
        ck.put_encoder(&state.params);
        ck.tensors
            .push(("loss_weights".into(), state.loss_weights.to_tensor()));
        let mut names: Vec<String> = state.params.named().into_iter().map(|(n, _)| n).collect();
        names.push("loss_weights".into());
        for (which, moments) in [("m", &state.optim.m), ("v", &state.optim.v)] {
            for (n, t) in names.iter().zip(moments) {
                ck.tensors.push((format!("adam.{which}.{n}"), t.clone()));
            }
        }
        ck
    }

    pub fn to_pretrain(&self) -> Result<PretrainState> {
        if self.kind()? != "pretrain" {
            return Err(Error::Checkpoint(format!(
                "expected a pretrain checkpoint, found {}",
                self.kind()?
            )));
        }
        let encoder = self.encoder()?;
        let loss_weights = LossWeights::from_tensor(self.tensor("loss_weights")?)?;
        let mut names: Vec<String> = encoder.params.named().into_iter().map(|(n, _)| n).collect();
        names.push("loss_weights".into());
        let moments = |which: &str| -> Result<Vec<Tensor>> {
            names
                .iter()
                .map(|n| self.tensor(&format!("adam.{which}.{n}")).cloned())
                .collect()
        };
        Ok(PretrainState {
            config: encoder.config,
            params: encoder.params,
            loss_weights,
            optim: OptimState {
                m: moments("m")?,
                v: moments("v")?,
                t: self.meta_parse("adam.t")?,
            },
            step: self.meta_parse("step")?,
        })
    }

    pub fn from_classifier(clf: &Classifier, config: &RunConfig) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("kind".into(), "classifier".into());
        let mut cfg = config.clone();
        cfg.encoder = clf.encoder.config.clone();
        cfg.finetune.n_classes = clf.head.n_classes();
        ck.put_config(&cfg);
        ck.put_encoder(&clf.encoder.params);
        ck.tensors
            .push(("head.weight".into(), clf.head.weight.clone()));
        ck.tensors.push(("head.bias".into(), clf.head.bias.clone()));
        ck
    }

    pub fn to_classifier(&self) -> Result<Classifier> {
        if self.kind()? != "classifier" {
            return Err(Error::Checkpoint(format!(
                "expected a classifier checkpoint, found {}",
                self.kind()?
            )));
        }
        let encoder = self.encoder()?;
        let head = ClassifierHead {
            weight: self.tensor("head.weight")?.clone(),
            bias: self.tensor("head.bias")?.clone(),
        };
        let d = encoder.config.d_model;
        if head.weight.shape() != [head.n_classes(), d] {
            return Err(Error::shape(
                "classifier head",
                &[head.weight.shape(), head.bias.shape()],
            ));
        }
        Ok(Classifier { encoder, head })
    }
}

/// One token per line in id order, specials first; a tab and the pool tag
/// follow tokens that have one.
pub fn vocab_to_text(vocab: &Vocab) -> String {
    let mut out = String::new();
    for (id, tok) in vocab.tokens().iter().enumerate() {
        out.push_str(tok);
        if let Some(tag) = vocab.tag_of(id as u32) {
            out.push('\t');
            out.push_str(tag.name());
        }
        out.push('\n');
    }
    out
}

pub fn vocab_from_text(text: &str, origin: &str) -> Result<Vocab> {
    let specials = Vocab::specials();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (tok, tag) = match line.split_once('\t') {
            Some((t, tag)) => (
                t,
                Some(
                    tag.parse::<Tag>()
                        .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?,
                ),
            ),
            None => (line, None),
        };
        if i < NUM_SPECIAL {
            if Some(tok) != specials.token(i as u32) {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected special token {:?}", specials.token(i as u32)),
                ));
            }
            continue;
        }
        if tok.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty token"));
        }
        tokens.push(tok.to_string());
        tags.push(tag);
    }
    let mut vocab = Vocab::from_tokens(tokens)?;
    for (i, tag) in tags.into_iter().enumerate() {
        vocab.set_tag((i + NUM_SPECIAL) as u32, tag);
    }
    Ok(vocab)
}

/// `feature<TAB>w_ADJ w_ADV w_NOUN w_OTHER w_VERB`, sorted by feature.
pub fn tagger_to_text(model: &TaggerModel) -> String {
    let mut keys: Vec<&String> = model.weights().keys().collect();
    keys.sort();
    let mut out = String::new();
    for k in keys {
        let w = model.weights()[k];
        let ws: Vec<String> = w.iter().map(f64::to_string).collect();
        out.push_str(&format!("{k}\t{}\n", ws.join(" ")));
    }
    out
}

pub fn tagger_from_text(text: &str, origin: &str) -> Result<TaggerModel> {
    let mut weights = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let err = |m: &str| Error::parse(origin, i + 1, m.to_string());
        let (feat, ws) = line
            .split_once('\t')
            .ok_or_else(|| err("expected feature<TAB>weights"))?;
        let ws: Vec<f64> = ws
            .split(' ')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err("weights must be numbers"))?;
        let ws: [f64; 5] = ws.try_into().map_err(|_| err("expected 5 weights"))?;
        weights.insert(feat.to_string(), ws);
    }
    TaggerModel::from_weights(weights)
}

pub fn triplets_to_jsonl(triplets: &[TripletExample]) -> String {
    triplets
        .iter()
        .map(|t| serde_json::to_string(t).expect("triplet serializes") + "\n")
        .collect()
}

pub fn triplets_from_jsonl(text: &str, origin: &str) -> Result<Vec<TripletExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let t: TripletExample =
                serde_json::from_str(l).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
            t.check()
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
            Ok(t)
        })
        .collect()
}

/// `label<TAB>text` or `label<TAB>text1<TAB>text2` lines.
pub fn labeled_from_tsv(text: &str, origin: &str) -> Result<Vec<LabeledExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            let err = |m: String| Error::parse(origin, i + 1, m);
            let label = fields[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("label `{}` is not a class index", fields[0])))?;
            match fields[1..] {
                [a] => Ok(LabeledExample::new(label, a)),
                [a, b] => Ok(LabeledExample {
                    label,
                    text: a.to_string(),
                    pair: Some(b.to_string()),
                }),
                _ => Err(err(format!(
                    "expected 2 or 3 tab-separated fields, got {}",
                    fields.len()
                ))),
            }
        })
        .collect()
}

pub fn labeled_to_tsv(examples: &[LabeledExample]) -> String {
    examples
        .iter()
        .map(|e| match &e.pair {
            Some(b) => format!("{}\t{}\t{}\n", e.label, e.text, b),
            None => format!("{}\t{}\n", e.label, e.text),
        })
        .collect()
}

pub fn metrics_log(lines: &[StepLosses]) -> String {
    lines.iter().map(|l| l.log_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_bytes_roundtrip() {
        let mut ck = Checkpoint::default();
        ck.meta.insert("kind".into(), "test".into());
        ck.tensors.push((
            "a".into(),
            Tensor::matrix(2, 2, vec![1.0, -0.5, 1e-300, f64::MAX]).unwrap(),
        ));
        ck.tensors.push(("s".into(), Tensor::scalar(3.25)));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let mut ck = Checkpoint::default();
        ck.tensors
            .push(("a".into(), Tensor::vector(vec![1.0, 2.0])));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], "mem").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, "mem").is_err());
        assert!(Checkpoint::from_bytes(b"hello\n", "mem").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("\t0\n", "\t8\n");
        assert!(Checkpoint::from_bytes(text.as_bytes(), "mem").is_err());
    }

    #[test]
    fn vocab_text_roundtrip() {
        let mut v = Vocab::from_tokens(["good", "run"]).unwrap();
        v.set_tag(5, Some(Tag::Adj));
        let text = vocab_to_text(&v);
        assert_eq!(text, "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\ngood\tADJ\nrun\n");
        assert_eq!(vocab_from_text(&text, "v").unwrap(), v);
        assert!(vocab_from_text("[PAD]\nfoo\n", "v").is_err());
    }

    #[test]
    fn tagger_text_roundtrip() {
        let mut w = HashMap::new();
        w.insert("w=good".to_string(), [0.1, -2.0, 0.0, 3.5, 1e-17]);
        w.insert("bias".to_string(), [1.0; 5]);
        let m = TaggerModel::from_weights(w).unwrap();
        let text = tagger_to_text(&m);
        assert!(text.starts_with("bias\t"));
        assert_eq!(tagger_from_text(&text, "t").unwrap(), m);
        assert!(tagger_from_text("bias\t1 2", "t").is_err());
    }

    #[test]
    fn labeled_tsv() {
        let ex = labeled_from_tsv("1\tgood movie\n0\ta\tb\n", "d").unwrap();
        assert_eq!(ex[0], LabeledExample::new(1, "good movie"));
        assert_eq!(ex[1].pair.as_deref(), Some("b"));
        assert_eq!(labeled_to_tsv(&ex), "1\tgood movie\n0\ta\tb\n");
        assert!(labeled_from_tsv("x\tgood\n", "d")
            .unwrap_err()
            .to_string()
            .starts_with("d:1:"));
        assert!(labeled_from_tsv("1\n", "d").is_err());
    }
}
