use std::fs;
use std::path::Path;

use kge_core::checkpoint::{load_meta, load_params, save_params};
use kge_core::data::{
    build_filter_index, find_split_file, load_triples, remove_redundant, write_triples, SPLITS,
};
use kge_core::eval::evaluate as rank_split;
use kge_core::expressivity::{construct, verify, GroundTruth};
use kge_core::rules::{parse_rules, ties_from_rules};
use kge_core::training::{sigmoid, train as run_training};
use kge_core::{Dataset, TrainConfig, Triple, TripleSet, Vocabulary};

use crate::error::{CliError, CliResult};
use crate::{DedupeArgs, EvaluateArgs, OracleArgs, PreprocessArgs, ScoreArgs, Split, TrainArgs};

const ENTITIES_FILE: &str = "entities.tsv";
const RELATIONS_FILE: &str = "relations.tsv";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

pub fn preprocess(args: &PreprocessArgs) -> CliResult<()> {
    let data = Dataset::load(&args.data)?;
    let t = &data.triples;
    println!("entities          {}", data.vocab.num_entities());
    println!("relations         {}", data.vocab.num_relations());
    for (i, (name, split)) in SPLITS.iter().zip([&t.train, &t.valid, &t.test]).enumerate() {
        println!(
            "{:<18}{} ({} duplicate lines collapsed)",
            name,
            split.len(),
            data.duplicates[i]
        );
    }
    println!("cross-split dups  {}", t.overlap_count());
    println!("distinct triples  {}", t.filter_len());

    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        data.vocab
            .export(&out.join(ENTITIES_FILE), &out.join(RELATIONS_FILE))?;
        for (name, split) in SPLITS.iter().zip([&t.train, &t.valid, &t.test]) {
            write_triples(&out.join(format!("{name}.txt")), split, &data.vocab)?;
        }
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn train_config(args: &TrainArgs, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.model {
        config.model_kind = v;
    }
    if let Some(v) = args.dim {
        config.dim = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.lambda {
        config.lambda = v;
    }
    if let Some(v) = args.neg {
        config.neg_ratio = v;
    }
    if let Some(v) = args.batch {
        config.batch_size = v;
    }
    if let Some(v) = args.epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = seed {
        config.seed = v;
    }
    config.validate()?;
    Ok(config)
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> CliResult<()> {
    let config = train_config(args, seed)?;
    let data = Dataset::load(&args.data)?;
    let ties = match &args.rules {
        Some(path) => {
            let rules = parse_rules(path)?;
            let spec = ties_from_rules(&rules, &data.vocab)?;
            log::info!(
                "{} rules give {} tied relation vectors",
                rules.len(),
                spec.len()
            );
            Some(spec)
        }
        None => None,
    };
    log::info!(
        "training {} (d={}) on {} triples, {} entities, {} relations",
        config.model_kind,
        config.dim,
        data.triples.train.len(),
        data.vocab.num_entities(),
        data.vocab.num_relations()
    );
    let (params, history) = run_training(&config, &data, ties.as_ref())?;

    let out = &args.out;
    save_params(&params, out)?;
    data.vocab
        .export(&out.join(ENTITIES_FILE), &out.join(RELATIONS_FILE))?;
    history.write_csv(&out.join("history.csv"))?;
    let config_path = out.join("config.json");
    let json = serde_json::to_string_pretty(&config).expect("config serialises");
    fs::write(&config_path, json + "\n").map_err(|e| io_err(&config_path, e))?;

    match (history.best_epoch, history.best_valid_mrr) {
        (Some(epoch), Some(mrr)) => {
            println!("best validation filtered MRR {mrr:.4} at epoch {epoch}")
        }
        _ => println!("no validation run; kept the final parameters"),
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

/// Loads the splits under the checkpoint's vocabulary when it has one, so
/// ids line up with the trained rows.
fn load_for_checkpoint(data: &Path, checkpoint: &Path) -> CliResult<(TripleSet, Vocabulary)> {
    let (ents, rels) = (
        checkpoint.join(ENTITIES_FILE),
        checkpoint.join(RELATIONS_FILE),
    );
    if !(ents.is_file() && rels.is_file()) {
        let d = Dataset::load(data)?;
        return Ok((d.triples, d.vocab));
    }
    let vocab = Vocabulary::import(&ents, &rels)?;
    let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for split in SPLITS {
        let path = find_split_file(data, split)?;
        let (triples, _) = load_triples(&path, Some(&vocab)).map_err(|e| match e {
            kge_core::Error::UnknownName { .. } => CliError::Compat(format!(
                "{}: {e} in the checkpoint vocabulary",
                path.display()
            )),
            other => other.into(),
        })?;
        splits.push(triples);
    }
    let [train, valid, test]: [Vec<Triple>; 3] = splits.try_into().expect("three splits");
    Ok((build_filter_index(train, valid, test), vocab))
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let meta = load_meta(&args.checkpoint)?;
    let (triples, vocab) = load_for_checkpoint(&args.data, &args.checkpoint)?;
    if vocab.num_entities() != meta.num_entities || vocab.num_relations() != meta.num_relations {
        return Err(CliError::Compat(format!(
            "checkpoint has {} entities and {} relations, data has {} and {}",
            meta.num_entities,
            meta.num_relations,
            vocab.num_entities(),
            vocab.num_relations()
        )));
    }
    let params = load_params(&args.checkpoint)?;
    let split = match args.split {
        Split::Test => &triples.test,
        Split::Valid => &triples.valid,
    };
    let report = rank_split(&params, split, &triples)?;

    print!("{report}");
    let json = serde_json::to_string_pretty(&report.to_json()).expect("report serialises");
    println!("{json}");
    if let Some(path) = &args.json {
        fs::write(path, json + "\n").map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &args.per_triple {
        report.write_per_triple_csv(path, Some(&vocab))?;
    }
    Ok(())
}

/// Up to three known names closest to `name` by edit distance.
fn nearest<'a>(name: &str, known: &'a [String]) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = known
        .iter()
        .map(|k| (strsim::levenshtein(name, k), k.as_str()))
        .collect();
    scored.sort();
    scored.into_iter().take(3).map(|(_, k)| k).collect()
}

fn lookup(kind: &str, name: &str, id: Option<usize>, known: &[String]) -> CliResult<usize> {
    id.ok_or_else(|| {
        let close = nearest(name, known);
        let hint = if close.is_empty() {
            String::new()
        } else {
            format!("; nearest: {}", close.join(", "))
        };
        CliError::Lookup(format!("unknown {kind} `{name}`{hint}"))
    })
}

pub fn score(args: &ScoreArgs) -> CliResult<()> {
    let ckpt = &args.checkpoint;
    let meta = load_meta(ckpt)?;
    if let Some(kind) = args.model_kind {
        if kind != meta.model_kind {
            return Err(CliError::Compat(format!(
                "checkpoint holds a {} model, not {kind}",
                meta.model_kind
            )));
        }
    }
    let vocab = Vocabulary::import(&ckpt.join(ENTITIES_FILE), &ckpt.join(RELATIONS_FILE))?;
    let ents = vocab.entity_names();
    let head = lookup("entity", &args.head, vocab.entity_id(&args.head), ents)?;
    let relation = lookup(
        "relation",
        &args.relation,
        vocab.relation_id(&args.relation),
        vocab.relation_names(),
    )?;
    let tail = lookup("entity", &args.tail, vocab.entity_id(&args.tail), ents)?;

    let params = load_params(ckpt)?;
    let s = params.try_score(&Triple::new(head, relation, tail))?;
    println!("score    {s}");
    println!("sigmoid  {}", sigmoid(s));
    Ok(())
}

pub fn oracle(args: &OracleArgs) -> CliResult<()> {
    let gt = GroundTruth::read(&args.input)?;
    let (used, params) = construct(&gt, args.method.into());
    let (ok, bad) = verify(&params, &gt);
    println!(
        "entities {}, relations {}, true triples {}",
        gt.num_entities(),
        gt.num_relations(),
        gt.gamma()
    );
    println!("construction  {used}");
    println!("dimension     {}", params.dim());
    if ok {
        println!("verification  pass");
        Ok(())
    } else {
        println!("verification  FAIL ({} violations)", bad.len());
        for t in bad.iter().take(10) {
            println!("  {} {} {}", t.head, t.relation, t.tail);
        }
        Err(CliError::Failed(
            "construction does not reproduce the ground truth".into(),
        ))
    }
}

pub fn dedupe(args: &DedupeArgs, seed: u64) -> CliResult<()> {
    let (train, vocab) = load_triples(&args.train, None)?;
    let rules = parse_rules(&args.rules)?;
    let kept = remove_redundant(&train, &rules, &vocab, seed)?;
    write_triples(&args.out, &kept, &vocab)?;
    let reduction = if train.is_empty() {
        0.0
    } else {
        100.0 * (1.0 - kept.len() as f64 / train.len() as f64)
    };
    println!("before     {}", train.len());
    println!("after      {}", kept.len());
    println!("reduction  {reduction:.2}%");
    Ok(())
}
