use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use gridner::ensemble::{self, FoldSplit, LabeledDataset, Record};
use gridner::eval::{self, MatchCounts};
use gridner::grid::{self, DecodeLimits, EntityMention, GridScores};
use gridner::optim::{AdamWConfig, FocalParams, GroupHyper, Loss};
use gridner::records::{self, DecodedEntity, GridBody, GridDoc, NerRecord, SpanEntity};
use gridner::synth;
use gridner::textnorm::{self, EmojiMap};
use gridner::toymodel::{self, Checkpoint, TrainConfig, BACKBONE, HEAD};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::io::{
    data_err, locate, read_json_stream, read_jsonl, read_lines, read_to_string, write_json,
    CliError, Output, Result,
};
use crate::{Cli, Command, InOut, Limits, LossKind, TrainArgs};

pub const EMOJI_MAP_ENV: &str = "GRIDNER_EMOJI_MAP";

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let quiet = cli.quiet;
    match cli.command {
        Command::Normalize { io, emoji_map } => normalize(&io, emoji_map),
        Command::Tokenize { io } => tokenize(&io),
        Command::GridEncode { io } => grid_encode(&io),
        Command::GridDecode { io, limits } => grid_decode(&io, &limits),
        Command::GridFuse { inputs, out } => grid_fuse(&inputs, &out),
        Command::Folds { io, k } => folds(&io, k, seed),
        Command::Oversample { io } => oversample(&io, seed),
        Command::Train(args) => train(&args, seed, quiet),
        Command::Predict {
            io,
            model,
            raw_weights,
        } => predict(&io, &model, raw_weights),
        Command::Fuse { preds, out } => fuse(&preds, &out),
        Command::EvalCls {
            pred,
            gold,
            threshold,
            out,
        } => eval_cls(&pred, &gold, threshold, &out),
        Command::EvalNer { pred, gold, out } => eval_ner(&pred, &gold, &out),
        Command::GenSynth { n, pos_rate, out } => gen_synth(n, pos_rate, seed, &out),
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

/// A JSONL object with string `id` and `text` fields; other fields pass through.
struct TextLine {
    line: usize,
    id: String,
    text: String,
    value: Map<String, Value>,
}

fn read_text_lines(path: &Path) -> Result<Vec<TextLine>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, src)| {
            let value: Value = serde_json::from_str(&src)
                .map_err(|e| data_err(format!("{}: {e}", locate(path, line, None))))?;
            let Value::Object(value) = value else {
                return Err(data_err(format!(
                    "{}: expected a JSON object",
                    locate(path, line, None)
                )));
            };
            let id = value.get("id").and_then(Value::as_str).map(str::to_owned);
            let Some(id) = id else {
                return Err(data_err(format!(
                    "{}: missing string field \"id\"",
                    locate(path, line, None)
                )));
            };
            let Some(text) = value.get("text").and_then(Value::as_str).map(str::to_owned) else {
                return Err(data_err(format!(
                    "{}: missing string field \"text\"",
                    locate(path, line, Some(&id))
                )));
            };
            Ok(TextLine {
                line,
                id,
                text,
                value,
            })
        })
        .collect()
}

fn load_emoji_map(flag: Option<PathBuf>) -> Result<EmojiMap> {
    let path = flag.or_else(|| {
        std::env::var_os(EMOJI_MAP_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    match path {
        None => Ok(EmojiMap::bundled()),
        Some(p) => EmojiMap::parse_tsv(&read_to_string(&p)?)
            .map_err(|e| data_err(format!("{}: {e}", p.display()))),
    }
}

fn normalize(io: &InOut, emoji_map: Option<PathBuf>) -> Result<()> {
    let map = load_emoji_map(emoji_map)?;
    let mut out = Output::create(&io.out)?;
    for mut rec in read_text_lines(&io.input)? {
        let at = || locate(&io.input, rec.line, Some(&rec.id));
        if rec.value.contains_key("entities") {
            let ner: NerRecord = serde_json::from_value(Value::Object(rec.value.clone()))
                .map_err(|e| data_err(format!("{}: {e}", at())))?;
            let norm = ner
                .normalized(&map)
                .map_err(|e| data_err(format!("{}: {e}", at())))?;
            rec.value.insert("text".into(), Value::String(norm.text));
            rec.value.insert(
                "entities".into(),
                serde_json::to_value(&norm.entities).map_err(data_err)?,
            );
        } else {
            rec.value.insert(
                "text".into(),
                Value::String(textnorm::normalize(&rec.text, &map)),
            );
        }
        out.line(&rec.value)?;
    }
    out.finish()
}

fn tokenize(io: &InOut) -> Result<()> {
    let mut out = Output::create(&io.out)?;
    for mut rec in read_text_lines(&io.input)? {
        let tokens = textnorm::tokenize(&rec.text);
        rec.value.insert(
            "tokens".into(),
            serde_json::to_value(tokens).map_err(data_err)?,
        );
        out.line(&rec.value)?;
    }
    out.finish()
}

fn grid_encode(io: &InOut) -> Result<()> {
    let mut out = Output::create(&io.out)?;
    for (line, rec) in read_jsonl::<NerRecord>(&io.input)? {
        let at = || locate(&io.input, line, Some(&rec.id));
        let (tokens, mentions) = rec
            .mentions()
            .map_err(|e| data_err(format!("{}: {e}", at())))?;
        let grid = grid::encode_grid(&mentions, tokens.len())
            .map_err(|e| data_err(format!("{}: {e}", at())))?;
        let mut doc = Map::new();
        doc.insert("id".into(), Value::String(rec.id.clone()));
        doc.insert("text".into(), Value::String(rec.text.clone()));
        doc.insert(
            "tokens".into(),
            serde_json::to_value(&tokens).map_err(data_err)?,
        );
        if let Value::Object(g) = grid.to_json_value() {
            doc.extend(g);
        }
        out.line(&doc)?;
    }
    out.finish()
}

fn doc_label(path: &Path, index: usize, id: Option<&str>) -> String {
    match id {
        Some(id) => format!("{}: document {} (id {id:?})", path.display(), index + 1),
        None => format!("{}: document {}", path.display(), index + 1),
    }
}

fn read_grid_docs(path: &Path) -> Result<Vec<GridDoc>> {
    read_json_stream(path)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let id = v.get("id").and_then(Value::as_str);
            GridDoc::from_value(v).map_err(|e| data_err(format!("{}: {e}", doc_label(path, i, id))))
        })
        .collect()
}

#[derive(Serialize)]
struct DecodedDoc<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    entities: Vec<DecodedEntity>,
}

fn grid_decode(io: &InOut, limits: &Limits) -> Result<()> {
    let limits = DecodeLimits::new(limits.max_entity_tokens, limits.max_paths).map_err(usage)?;
    let mut out = Output::create(&io.out)?;
    for doc in read_grid_docs(&io.input)? {
        let mentions = match &doc.body {
            GridBody::Grid(g) => grid::decode_grid(g, limits),
            GridBody::Scores(s) => grid::decode_scores(s, limits),
        };
        let entities = mentions
            .iter()
            .map(|m| DecodedEntity::new(m, doc.tokens.as_deref()))
            .collect();
        out.line(&DecodedDoc {
            id: doc.id.as_deref(),
            text: doc.text.as_deref(),
            entities,
        })?;
    }
    out.finish()
}

fn grid_fuse(inputs: &[PathBuf], out_path: &Path) -> Result<()> {
    let files = inputs
        .iter()
        .map(|p| read_grid_docs(p))
        .collect::<Result<Vec<_>>>()?;
    let count = files[0].len();
    for (p, docs) in inputs.iter().zip(&files) {
        if docs.len() != count {
            return Err(data_err(format!(
                "{}: {} documents, expected {count}",
                p.display(),
                docs.len()
            )));
        }
    }
    let mut out = Output::create(out_path)?;
    for j in 0..count {
        let first = &files[0][j];
        let mut members: Vec<GridScores> = Vec::with_capacity(files.len());
        for (p, docs) in inputs.iter().zip(&files) {
            let doc = &docs[j];
            let at = doc_label(p, j, doc.id.as_deref());
            if doc.id != first.id {
                return Err(data_err(format!(
                    "{at}: id does not match {:?} in {}",
                    first.id,
                    inputs[0].display()
                )));
            }
            match &doc.body {
                GridBody::Scores(s) => members.push(s.clone()),
                GridBody::Grid(_) => {
                    return Err(data_err(format!(
                        "{at}: expected a score document, found a grid"
                    )))
                }
            }
        }
        let fused = grid::fuse_scores(&members).map_err(|e| {
            data_err(format!(
                "{}: {e}",
                doc_label(&inputs[0], j, first.id.as_deref())
            ))
        })?;
        let mut doc = Map::new();
        if let Some(id) = &first.id {
            doc.insert("id".into(), json!(id));
        }
        if let Some(text) = &first.text {
            doc.insert("text".into(), json!(text));
        }
        if let Some(tokens) = &first.tokens {
            doc.insert(
                "tokens".into(),
                serde_json::to_value(tokens).map_err(data_err)?,
            );
        }
        if let Value::Object(s) = fused.to_json_value() {
            doc.extend(s);
        }
        out.line(&doc)?;
    }
    out.finish()
}

fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let records: Vec<Record> = read_jsonl::<Record>(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    LabeledDataset::new(records).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn folds(io: &InOut, k: usize, seed: u64) -> Result<()> {
    if k < 2 {
        return Err(usage(format!("--k must be at least 2, got {k}")));
    }
    let ds = read_dataset(&io.input)?;
    let split = ensemble::stratified_kfold(&ds, k, seed)
        .map_err(|e| data_err(format!("{}: {e}", io.input.display())))?;
    write_json(&io.out, &split)
}

fn oversample(io: &InOut, seed: u64) -> Result<()> {
    let ds = read_dataset(&io.input)?;
    let balanced = ensemble::oversample(&ds, seed)
        .map_err(|e| data_err(format!("{}: {e}", io.input.display())))?;
    let mut out = Output::create(&io.out)?;
    for r in balanced.records() {
        out.line(r)?;
    }
    out.finish()
}

fn train_config(args: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let loss = match args.loss {
        LossKind::Ce => Loss::CrossEntropy,
        LossKind::Focal => Loss::Focal(FocalParams::new(args.alpha, args.gamma).map_err(usage)?),
    };
    let adamw = AdamWConfig::with_groups([
        (
            BACKBONE,
            GroupHyper {
                lr: args.lr_backbone,
                weight_decay: args.wd_backbone,
            },
        ),
        (
            HEAD,
            GroupHyper {
                lr: args.lr_head,
                weight_decay: args.wd_head,
            },
        ),
    ]);
    adamw.validate().map_err(usage)?;
    if args.epochs == 0 || args.batch_size == 0 {
        return Err(usage("--epochs and --batch-size must be positive"));
    }
    if !args.dim.is_power_of_two() || args.dim > 1 << 28 {
        return Err(usage(format!(
            "--dim must be a power of two up to 2^28, got {}",
            args.dim
        )));
    }
    if !(0.0..1.0).contains(&args.ema_decay) {
        return Err(usage(format!(
            "--ema-decay must be in [0, 1), got {}",
            args.ema_decay
        )));
    }
    Ok(TrainConfig {
        loss,
        adamw,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
        ema_decay: args.ema_decay,
        oversample: args.oversample,
        dim: args.dim,
        hash_seed: args.hash_seed,
    })
}

fn train(args: &TrainArgs, seed: u64, quiet: bool) -> Result<()> {
    let config = train_config(args, seed)?;
    let mut ds = read_dataset(&args.io.input)?;
    if let (Some(path), Some(i)) = (&args.folds, args.exclude_fold) {
        let split: FoldSplit = serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        if i >= split.k {
            return Err(usage(format!(
                "--exclude-fold {i} is out of range for k = {}",
                split.k
            )));
        }
        split
            .check_against(&ds)
            .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        ds = ds.subset(&split.train_ids(i));
    }
    let trained = toymodel::train(&ds, &config)
        .map_err(|e| data_err(format!("{}: {e}", args.io.input.display())))?;
    if !quiet {
        let r = &trained.report;
        eprintln!(
            "trained on {} records: {} steps, loss {:.6} -> {:.6}",
            ds.len(),
            r.steps,
            r.initial_loss,
            r.final_loss
        );
    }
    write_json(
        &args.io.out,
        &Checkpoint::from_parts(&trained.model, &trained.ema),
    )
}

#[derive(Deserialize)]
struct IdText {
    id: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Prediction {
    id: String,
    prob: f64,
}

fn predict(io: &InOut, model_path: &Path, raw: bool) -> Result<()> {
    let ckpt: Checkpoint = serde_json::from_str(&read_to_string(model_path)?)
        .map_err(|e| data_err(format!("{}: {e}", model_path.display())))?;
    let (model, ema) = ckpt
        .into_parts()
        .map_err(|e| data_err(format!("{}: {e}", model_path.display())))?;
    let model = if raw {
        model
    } else {
        let shadow = ema.debiased().map_err(|e| {
            data_err(format!(
                "{}: EMA weights unavailable ({e}); use --raw-weights",
                model_path.display()
            ))
        })?;
        model
            .with_values(shadow)
            .map_err(|e| data_err(format!("{}: {e}", model_path.display())))?
    };
    let mut out = Output::create(&io.out)?;
    for (_, r) in read_jsonl::<IdText>(&io.input)? {
        out.line(&Prediction {
            prob: model.predict_text(&r.text),
            id: r.id,
        })?;
    }
    out.finish()
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let preds = read_jsonl::<Prediction>(path)?;
    let mut seen = HashSet::new();
    for (line, p) in &preds {
        if !seen.insert(p.id.as_str()) {
            return Err(data_err(format!(
                "{}: duplicate id",
                locate(path, *line, Some(&p.id))
            )));
        }
        if !(0.0..=1.0).contains(&p.prob) {
            return Err(data_err(format!(
                "{}: prob {} is outside [0, 1]",
                locate(path, *line, Some(&p.id)),
                p.prob
            )));
        }
    }
    Ok(preds.into_iter().map(|(_, p)| p).collect())
}

fn fuse(paths: &[PathBuf], out_path: &Path) -> Result<()> {
    let files = paths
        .iter()
        .map(|p| read_predictions(p))
        .collect::<Result<Vec<_>>>()?;
    let order: Vec<&str> = files[0].iter().map(|p| p.id.as_str()).collect();
    let mut members = Vec::with_capacity(files.len());
    for (path, preds) in paths.iter().zip(&files) {
        let by_id: HashMap<&str, f64> = preds.iter().map(|p| (p.id.as_str(), p.prob)).collect();
        if let Some(extra) = preds.iter().find(|p| !order.contains(&p.id.as_str())) {
            return Err(data_err(format!(
                "{}: id {:?} is not in {}",
                path.display(),
                extra.id,
                paths[0].display()
            )));
        }
        let column = order
            .iter()
            .map(|id| {
                by_id
                    .get(id)
                    .copied()
                    .ok_or_else(|| data_err(format!("{}: missing id {id:?}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        members.push(column);
    }
    let fused = ensemble::mean_pool_probs(&members).map_err(data_err)?;
    let mut out = Output::create(out_path)?;
    for (id, prob) in order.iter().zip(fused) {
        out.line(&Prediction {
            id: id.to_string(),
            prob,
        })?;
    }
    out.finish()
}

/// `label` (0/1) takes precedence over `prob`.
fn read_binary(path: &Path, threshold: Option<f64>) -> Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, v) in read_jsonl::<Value>(path)? {
        let id = v.get("id").and_then(Value::as_str).ok_or_else(|| {
            data_err(format!(
                "{}: missing string field \"id\"",
                locate(path, line, None)
            ))
        })?;
        let at = || locate(path, line, Some(id));
        let positive = match (v.get("label"), v.get("prob"), threshold) {
            (Some(l), _, _) => match l.as_u64() {
                Some(0) => false,
                Some(1) => true,
                _ => return Err(data_err(format!("{}: label must be 0 or 1, got {l}", at()))),
            },
            (None, Some(p), Some(t)) => match p.as_f64() {
                Some(p) if (0.0..=1.0).contains(&p) => ensemble::threshold_labels(&[p], t)[0],
                _ => {
                    return Err(data_err(format!(
                        "{}: prob must be a number in [0, 1], got {p}",
                        at()
                    )))
                }
            },
            _ => return Err(data_err(format!("{}: missing \"label\"", at()))),
        };
        if !seen.insert(id.to_owned()) {
            return Err(data_err(format!("{}: duplicate id", at())));
        }
        out.push((id.to_owned(), positive));
    }
    Ok(out)
}

/// Pairs predictions with gold records by id; both sides must cover the same ids.
fn align<'a, T, U>(
    pred_path: &Path,
    pred: &'a [(String, T)],
    gold: &'a [(String, U)],
) -> Result<Vec<(&'a T, &'a U)>> {
    let by_id: HashMap<&str, &T> = pred.iter().map(|(id, p)| (id.as_str(), p)).collect();
    if let Some((id, _)) = pred
        .iter()
        .find(|(id, _)| !gold.iter().any(|(g, _)| g == id))
    {
        return Err(data_err(format!(
            "{}: id {id:?} has no gold record",
            pred_path.display()
        )));
    }
    gold.iter()
        .map(|(id, g)| {
            by_id.get(id.as_str()).map(|p| (*p, g)).ok_or_else(|| {
                data_err(format!(
                    "{}: no prediction for id {id:?}",
                    pred_path.display()
                ))
            })
        })
        .collect()
}

fn eval_cls(pred_path: &Path, gold_path: &Path, threshold: f64, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!(
            "--threshold must be in [0, 1], got {threshold}"
        )));
    }
    let pred = read_binary(pred_path, Some(threshold))?;
    let gold = read_binary(gold_path, None)?;
    let (p, g): (Vec<bool>, Vec<bool>) = align(pred_path, &pred, &gold)?
        .into_iter()
        .map(|(p, g)| (*p, *g))
        .unzip();
    let scores = eval::binary_prf(&p, &g).map_err(data_err)?;
    write_json(out, &scores)
}

/// Entities given either as token `indices` or as character `spans` of `text`.
#[derive(Deserialize)]
struct EvalEntity {
    #[serde(rename = "type")]
    type_label: String,
    indices: Option<Vec<usize>>,
    spans: Option<Vec<(usize, usize)>>,
}

#[derive(Deserialize)]
struct EvalRecord {
    id: String,
    text: Option<String>,
    #[serde(default)]
    entities: Vec<EvalEntity>,
}

fn read_mentions(path: &Path) -> Result<Vec<(String, Vec<EntityMention>)>> {
    let mut seen = HashSet::new();
    read_jsonl::<EvalRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let at = || locate(path, line, Some(&r.id));
            if !seen.insert(r.id.clone()) {
                return Err(data_err(format!("{}: duplicate id", at())));
            }
            let tokens = r.text.as_deref().map(textnorm::tokenize);
            let text_len = r.text.as_deref().map_or(0, |t| t.chars().count());
            let mentions = r
                .entities
                .iter()
                .enumerate()
                .map(|(k, e)| match (&e.indices, &e.spans, &tokens) {
                    (Some(idx), _, _) => {
                        let n = tokens.as_ref().map_or(usize::MAX, Vec::len);
                        EntityMention::new(e.type_label.clone(), idx.clone(), n)
                            .map_err(|err| data_err(format!("{}: entity {k}: {err}", at())))
                    }
                    (None, Some(spans), Some(tokens)) => {
                        let se = SpanEntity {
                            type_label: e.type_label.clone(),
                            spans: spans.clone(),
                        };
                        records::spans_to_mention(k, &se, tokens, text_len)
                            .map_err(|err| data_err(format!("{}: {err}", at())))
                    }
                    (None, Some(_), None) => Err(data_err(format!(
                        "{}: entity {k} has spans but the record has no \"text\"",
                        at()
                    ))),
                    (None, None, _) => Err(data_err(format!(
                        "{}: entity {k} has neither \"indices\" nor \"spans\"",
                        at()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((r.id, mentions))
        })
        .collect()
}

fn eval_ner(pred_path: &Path, gold_path: &Path, out: &Path) -> Result<()> {
    let pred = read_mentions(pred_path)?;
    let gold = read_mentions(gold_path)?;
    let mut counts = MatchCounts::default();
    for (p, g) in align(pred_path, &pred, &gold)? {
        counts += eval::ner_strict_counts(p, g);
    }
    write_json(out, &counts.scores())
}

fn gen_synth(n: usize, pos_rate: f64, seed: u64, out_path: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&pos_rate) {
        return Err(usage(format!(
            "--pos-rate must be in [0, 1], got {pos_rate}"
        )));
    }
    let ds = synth::generate(n, pos_rate, seed);
    let mut out = Output::create(out_path)?;
    for r in ds.records() {
        out.line(r)?;
    }
    out.finish()
}
