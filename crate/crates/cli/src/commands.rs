use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use fabrictext::attributes::{
    affinity_propagation, attribute_probabilities, generalization_precision, read_attribute_csv, read_labeled_keywords,
    similarity_matrix, write_attribute_csv, write_cluster_export, ApConfig, AttributeSet, Preference, OUTLIER,
};
use fabrictext::corpus::{audit_apply, ingest, read_audits, validate, Corpus, InputFormat, ShareBasis, ValidationPolicy};
use fabrictext::embeddings::{load_vectors, EmbeddingStore, VectorFormat};
use fabrictext::imagestats::{entropy_histogram, glcm_entropy, image_files, GrayImage, DEFAULT_LEVELS};
use fabrictext::lexistats::{
    coverage_curve, rank_lemmas, read_lemma_csv, select_lexicon, write_lemma_csv, CoverageMode, LemmaIndex, Lexicon,
};
use fabrictext::retrieval::{
    case_ranks, compare_invariance, extract_keywords, image_search, invariance, read_cases, recall_sweep, write_sweep_csv,
    ImageCatalog, InvarianceMode, RecallTable, TruthMode, DEFAULT_KS,
};
use fabrictext::simstats::{intra_inter, labels_from_map, AnosimSampling, SimilarityConfig};
use fabrictext::stattests::{Correction, RankMode, WilcoxonMethod, DEFAULT_HISTOGRAM_BINS};
use fabrictext::structure::{rank_product, structure_test, RankProduct, RankTable};
use fabrictext::textproc::{corpus_stats, load_pos_annotations, process_corpus, LemmaDictionary, ProcessedDescription, SpellChecker, SpellPolicy};
use fabrictext::util::Summary;
use rayon::prelude::*;
use serde_json::json;

use crate::run::{Run, Settings};
use crate::{CatalogArgs, Cli, CliError, Command, CorpusArgs, TextArgs};

type CliResult<T> = Result<T, CliError>;

pub fn execute(cli: Cli) -> CliResult<PathBuf> {
    let settings = Settings::load(cli.global.config.as_deref())?;
    let parse_setting = |key: &str| -> CliResult<Option<u64>> {
        settings
            .get(key)
            .map(|v| v.trim().parse::<u64>().map_err(|e| CliError::Usage(format!("config key {key}: {e}"))))
            .transpose()
    };
    let threads = match cli.global.threads {
        Some(t) => Some(t),
        None => parse_setting("threads")?.map(|t| t as usize),
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let seed = match cli.global.seed {
        Some(s) => s,
        None => parse_setting("seed")?.unwrap_or(0),
    };
    let output_dir = cli
        .global
        .output_dir
        .or_else(|| settings.get("output_dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let name = subcommand_name(&cli.command);
    let mut run = Run::new(name, &output_dir, settings, seed)?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&mut run, a),
        Command::Validate(a) => cmd_validate(&mut run, a),
        Command::Stats(a) => cmd_stats(&mut run, a),
        Command::Lexicon(a) => cmd_lexicon(&mut run, a),
        Command::Attributes(a) => cmd_attributes(&mut run, a),
        Command::Structure(a) => cmd_structure(&mut run, a),
        Command::Simstats(a) => cmd_simstats(&mut run, a),
        Command::Retrieval(a) => cmd_retrieval(&mut run, a),
        Command::Invariance(a) => cmd_invariance(&mut run, a),
        Command::Keywords(a) => cmd_keywords(&mut run, a),
        Command::Imagestats(a) => cmd_imagestats(&mut run, a),
        Command::Report(_) => crate::report::build(&mut run, &output_dir),
    }?;
    run.finish()
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Validate(_) => "validate",
        Command::Stats(_) => "stats",
        Command::Lexicon(_) => "lexicon",
        Command::Attributes(_) => "attributes",
        Command::Structure(_) => "structure",
        Command::Simstats(_) => "simstats",
        Command::Retrieval(_) => "retrieval",
        Command::Invariance(_) => "invariance",
        Command::Keywords(_) => "keywords",
        Command::Imagestats(_) => "imagestats",
        Command::Report(_) => "report",
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn source(path: &Path) -> String {
    path.display().to_string()
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_store(path: &Path) -> CliResult<EmbeddingStore> {
    Ok(load_vectors(path, VectorFormat::from_path(path))?)
}

fn load_corpus_opt(run: &mut Run, args: CorpusArgs) -> CliResult<Option<Corpus>> {
    let Some(path) = run.input("corpus", args.corpus)? else {
        return Ok(None);
    };
    let format = match run.opt_param::<String>("format", args.format)? {
        Some(f) => f.parse::<InputFormat>().map_err(usage)?,
        None => InputFormat::from_path(&path)
            .ok_or_else(|| usage(format!("{}: cannot infer corpus format; pass --format", path.display())))?,
    };
    Ok(Some(ingest(&path, format)?))
}

fn load_corpus(run: &mut Run, args: CorpusArgs) -> CliResult<Corpus> {
    load_corpus_opt(run, args)?.ok_or_else(|| usage("missing required input --corpus"))
}

/// Corpus plus processed valid descriptions.
fn load_text(run: &mut Run, args: TextArgs) -> CliResult<(Corpus, Vec<ProcessedDescription>)> {
    let corpus = load_corpus(run, args.corpus)?;
    text_pipeline(run, corpus, args.lemmas, args.stopwords, args.pos, args.spell)
}

fn text_pipeline(
    run: &mut Run,
    mut corpus: Corpus,
    lemmas: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    pos: Option<PathBuf>,
    spell: Option<String>,
) -> CliResult<(Corpus, Vec<ProcessedDescription>)> {
    let lemmas = run.input("lemmas", lemmas)?;
    let stopwords = run.input("stopwords", stopwords)?;
    let dict = if lemmas.is_none() && stopwords.is_none() {
        LemmaDictionary::bundled()
    } else {
        LemmaDictionary::from_files(lemmas.as_deref(), stopwords.as_deref())?
    };
    if let Some(pos) = run.input("pos", pos)? {
        corpus = corpus.with_pos_annotations(load_pos_annotations(&pos)?)?;
    }
    let spell = match run.choice("spell", spell, "off", &["off", "edit1"])?.as_str() {
        "edit1" => SpellPolicy::EditDistanceOne(SpellChecker::from_texts(
            corpus.valid_descriptions().map(|d| d.text.as_str()),
        )),
        _ => SpellPolicy::Off,
    };
    let processed = process_corpus(&corpus, &dict, &spell);
    Ok((corpus, processed))
}

fn load_catalog(run: &mut Run, args: CatalogArgs) -> CliResult<ImageCatalog> {
    if let Some(path) = run.input("catalog", args.catalog)? {
        return Ok(ImageCatalog::read_csv(open(&path)?, &source(&path))?);
    }
    match load_corpus_opt(run, args.corpus)? {
        Some(c) => Ok(ImageCatalog::from_corpus(&c)),
        None => Err(usage("missing image metadata: pass --catalog or --corpus")),
    }
}

fn load_attribute_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    Ok(read_attribute_csv(open(path)?, &source(path))?)
}

fn load_lexicon(path: &Path) -> CliResult<Lexicon> {
    let entries = read_lemma_csv(open(path)?, &source(path))?;
    Ok(Lexicon {
        entries,
        coverage: 0.0,
        target: 0.0,
    })
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(buf)
}

fn csv_data(e: csv::Error) -> fabrictext::Error {
    fabrictext::Error::InvalidParameter(format!("csv output: {e}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn cmd_ingest(run: &mut Run, a: crate::IngestArgs) -> CliResult<()> {
    let corpus = load_corpus(run, a.corpus)?;
    run.write_with("corpus.jsonl", |b| corpus.write_jsonl(b))?;
    let catalog = ImageCatalog::from_corpus(&corpus);
    run.write_with("images.csv", |b| catalog.write_csv(b))?;
    let materials: BTreeSet<&str> = corpus.images().iter().map(|i| i.material_id.as_str()).collect();
    run.write_json(
        "summary.json",
        &json!({
            "descriptions": corpus.len(),
            "valid_descriptions": corpus.valid_descriptions().count(),
            "images": corpus.images().len(),
            "materials": materials.len(),
            "describers": corpus.describers().len(),
        }),
    )
}

fn cmd_validate(run: &mut Run, a: crate::ValidateArgs) -> CliResult<()> {
    let mut corpus = load_corpus(run, a.corpus)?;
    let defaults = ValidationPolicy::default();
    let share_basis = match run.choice("share_basis", a.share_basis, "valid", &["valid", "all"])?.as_str() {
        "all" => ShareBasis::All,
        _ => ShareBasis::ValidOnly,
    };
    let policy = ValidationPolicy {
        min_words: run.param("min_words", a.min_words, defaults.min_words)?,
        max_words: run.param("max_words", a.max_words, defaults.max_words)?,
        min_count: run.param("min_count", a.min_count, defaults.min_count)?,
        max_share: run.param("max_share", a.max_share, defaults.max_share)?,
        share_basis,
        min_valid: run.param("min_valid", a.min_valid, defaults.min_valid)?,
    };
    let audit = run.input("audit", a.audit)?;
    let threshold = run.param("audit_threshold", a.audit_threshold, 0.35)?;
    let audited = match &audit {
        Some(path) => {
            let audits = read_audits(open(path)?, &source(path))?;
            let before = corpus.valid_descriptions().count();
            corpus = audit_apply(&corpus, &audits, threshold)?;
            Some(json!({
                "entries": audits.len(),
                "valid_before": before,
                "valid_after": corpus.valid_descriptions().count(),
            }))
        }
        None => None,
    };
    let report = validate(&corpus, &policy);
    if audited.is_some() {
        run.write_with("corpus.jsonl", |b| corpus.write_jsonl(b))?;
    }
    run.write_json(
        "validation.json",
        &json!({
            "policy": policy,
            "audit": audited,
            "descriptions": corpus.len(),
            "valid_descriptions": corpus.valid_descriptions().count(),
            "clean": report.is_clean(),
            "report": report,
        }),
    )
}

fn cmd_stats(run: &mut Run, a: crate::StatsArgs) -> CliResult<()> {
    let (_, processed) = load_text(run, a.text)?;
    let stats = corpus_stats(&processed)?;
    run.write_json("text_stats.json", &stats)?;
    run.write_with("length_histogram.csv", |b| {
        let mut w = csv_writer(b);
        w.write_record(["length", "raw", "processed"]).map_err(csv_data)?;
        for bin in &stats.length_histogram {
            w.write_record([bin.length.to_string(), bin.raw.to_string(), bin.processed.to_string()])
                .map_err(csv_data)?;
        }
        w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
    })?;
    if !stats.pos.is_empty() {
        run.write_with("pos.csv", |b| {
            let mut w = csv_writer(b);
            w.write_record(["tag", "total", "mean_fraction", "median_fraction", "q1", "q3"])
                .map_err(csv_data)?;
            for p in &stats.pos {
                let f = &p.fraction;
                w.write_record([
                    p.tag.as_str().to_string(),
                    p.total.to_string(),
                    f.mean.to_string(),
                    f.median.to_string(),
                    f.q1.to_string(),
                    f.q3.to_string(),
                ])
                .map_err(csv_data)?;
            }
            w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
        })?;
    }
    Ok(())
}

fn cmd_lexicon(run: &mut Run, a: crate::LexiconArgs) -> CliResult<()> {
    let (_, processed) = load_text(run, a.text)?;
    let target = run.param("target", a.target, 0.95)?;
    let mode = match run
        .choice("coverage_mode", a.coverage_mode, "occurrences", &["occurrences", "distinct"])?
        .as_str()
    {
        "distinct" => CoverageMode::Distinct,
        _ => CoverageMode::Occurrences,
    };
    let index = LemmaIndex::build(&processed);
    let ranking = rank_lemmas(index.lemma_stats());
    let curve = coverage_curve(&processed, &ranking, mode)?;
    let lexicon = select_lexicon(&curve, target)?;
    run.write_with("lemmas.csv", |b| write_lemma_csv(b, &ranking))?;
    run.write_with("coverage.csv", |b| curve.write_csv(b))?;
    run.write_with("lexicon.csv", |b| write_lemma_csv(b, &lexicon.entries))?;
    run.write_json(
        "lexicon.json",
        &json!({
            "stream_len": index.stream_len(),
            "distinct_lemmas": ranking.len(),
            "coverage_mode": mode,
            "descriptions": curve.descriptions,
            "target": lexicon.target,
            "coverage": lexicon.coverage,
            "size": lexicon.len(),
        }),
    )
}

fn parse_excluded(raw: &str) -> BTreeSet<String> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn cmd_attributes(run: &mut Run, a: crate::AttributesArgs) -> CliResult<()> {
    let emb_path = run.require_input("embeddings", a.embeddings)?;
    let store = load_store(&emb_path)?;
    let curated = run.input("attribute_csv", a.attribute_csv)?;

    let mut clustering = None;
    let set = match curated {
        Some(path) => AttributeSet::from_assignments(&load_attribute_pairs(&path)?, &store)?,
        None => {
            let lex_path = run
                .input("lexicon", a.lexicon)?
                .ok_or_else(|| usage("attributes: pass --attribute-csv or --lexicon"))?;
            let lexicon = load_lexicon(&lex_path)?;
            let (lemmas, missing): (Vec<String>, Vec<String>) =
                lexicon.lemmas().map(String::from).partition(|l| store.contains(l));
            if !missing.is_empty() {
                log::warn!("{} lexicon lemmas have no embedding and are not clustered", missing.len());
            }
            let preference = match run.param("preference", a.preference, "median".to_string())?.as_str() {
                "median" => Preference::Median,
                v => Preference::Value(v.parse().map_err(|_| usage(format!("preference: expected median or a number, got {v:?}")))?),
            };
            let defaults = ApConfig::default();
            let config = ApConfig {
                preference,
                damping: run.param("damping", a.damping, defaults.damping)?,
                conv_iters: run.param("conv_iters", a.conv_iters, defaults.conv_iters)?,
                max_iters: run.param("max_iters", a.max_iters, defaults.max_iters)?,
                seed: run.seed,
            };
            let curation = match run.input("curation", a.curation)? {
                Some(p) => Some(load_attribute_pairs(&p)?.into_iter().collect::<BTreeMap<String, String>>()),
                None => None,
            };
            let sim = similarity_matrix(&store, &lemmas)?;
            let ap = affinity_propagation(&sim, &config)?;
            let set = AttributeSet::from_clusters(&lemmas, &ap, curation.as_ref(), &store)?;
            clustering = Some(json!({
                "lemmas": lemmas.len(),
                "missing_embeddings": missing,
                "clusters": ap.exemplars.len(),
                "converged": ap.converged,
                "iterations": ap.iterations,
                "fallback": ap.fallback,
                "config": config,
            }));
            set
        }
    };

    let excluded = parse_excluded(&run.param("exclude", a.exclude, fabrictext::attributes::DEFAULT_EXCLUDED.join(","))?);
    let labeled = match run.input("labeled_keywords", a.labeled_keywords)? {
        Some(p) => Some(read_labeled_keywords(open(&p)?, &source(&p))?),
        None => None,
    };
    let text = match run.input("corpus", a.text.corpus.corpus.clone())? {
        Some(path) => {
            let format = match run.opt_param::<String>("format", a.text.corpus.format)? {
                Some(f) => f.parse::<InputFormat>().map_err(usage)?,
                None => InputFormat::from_path(&path)
                    .ok_or_else(|| usage(format!("{}: cannot infer corpus format; pass --format", path.display())))?,
            };
            let corpus = ingest(&path, format)?;
            Some(text_pipeline(run, corpus, a.text.lemmas, a.text.stopwords, a.text.pos, a.text.spell)?.1)
        }
        None => None,
    };

    run.write_with("attributes.csv", |b| write_attribute_csv(b, &set))?;
    run.write_with("clusters.csv", |b| write_cluster_export(b, &set))?;
    let summary: Vec<_> = set
        .attributes()
        .iter()
        .map(|at| json!({"name": at.name, "exemplar": at.exemplar, "members": at.members.len()}))
        .collect();

    let mut probabilities = None;
    if let Some(processed) = &text {
        let probs = attribute_probabilities(processed, &set)?;
        run.write_with("probabilities.csv", |b| {
            let mut w = csv_writer(b);
            w.write_record(["attribute", "descriptions", "p"]).map_err(csv_data)?;
            for (i, name) in probs.names.iter().enumerate() {
                w.write_record([name.clone(), probs.counts[i].to_string(), probs.p[i].to_string()])
                    .map_err(csv_data)?;
            }
            w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
        })?;
        run.write_with("conditional.csv", |b| {
            let mut w = csv_writer(b);
            w.write_record(["attribute", "given", "joint", "conditional"]).map_err(csv_data)?;
            for (i, ni) in probs.names.iter().enumerate() {
                for (j, nj) in probs.names.iter().enumerate() {
                    w.write_record([ni.clone(), nj.clone(), probs.joint(i, j).to_string(), fmt_opt(probs.p_cond[i][j])])
                        .map_err(csv_data)?;
                }
            }
            w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
        })?;
        probabilities = Some(json!({"descriptions": probs.descriptions, "names": probs.names, "p": probs.p}));
    }

    let mut precision = None;
    if let Some(labeled) = &labeled {
        let table = generalization_precision(labeled, &set, &store, &excluded);
        run.write_with("precision.csv", |b| table.write_csv(b))?;
        precision = Some(json!({"averages": table.averages, "unclassified": table.unclassified}));
    }

    run.write_json(
        "attributes.json",
        &json!({
            "attributes": summary,
            "outlier_label": OUTLIER,
            "outliers": set.outliers(),
            "excluded": excluded,
            "clustering": clustering,
            "probabilities": probabilities,
            "precision": precision,
        }),
    )
}

fn cmd_structure(run: &mut Run, a: crate::StructureArgs) -> CliResult<()> {
    let (_, processed) = load_text(run, a.text)?;
    let attr_path = run.require_input("attribute_csv", a.attribute_csv)?;
    let set = AttributeSet::membership_only(&load_attribute_pairs(&attr_path)?)?;
    let alpha = run.param("alpha", a.alpha, 0.05)?;
    let correction: Correction = run
        .choice("correction", a.correction, "holm", &["none", "bonferroni", "holm"])?
        .parse()
        .map_err(|e| usage(format!("correction: {e}")))?;
    let table = RankTable::build(&processed, &set);
    let products = rank_product(&table);
    let result = structure_test(&table, alpha, correction)?;
    run.write_with("rank_product.csv", |b| result.write_csv(b))?;
    run.write_json(
        "structure.json",
        &json!({
            "rank_products": products,
            "groups": result.groups(),
            "result": result,
        }),
    )
}

fn read_label_csv(path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| fabrictext::Error::parse(&source(path), i + 2, e.to_string()))?;
        match (row.get(0), row.get(1)) {
            (Some(k), Some(img)) => out.push((k.trim().to_string(), img.trim().to_string())),
            _ => {
                return Err(fabrictext::Error::parse(&source(path), i + 2, "expected key,image_id").into());
            }
        }
    }
    Ok(out)
}

fn cmd_simstats(run: &mut Run, a: crate::SimstatsArgs) -> CliResult<()> {
    let emb_path = run.require_input("embeddings", a.embeddings)?;
    let store = load_store(&emb_path)?;
    let labels = match run.input("labels", a.labels)? {
        Some(p) => read_label_csv(&p)?,
        None => {
            let corpus = load_corpus_opt(run, a.corpus)?
                .ok_or_else(|| usage("simstats: pass --labels or --corpus"))?;
            let map: BTreeMap<String, String> = corpus
                .valid_descriptions()
                .map(|d| (d.id.clone(), d.image_id.clone()))
                .collect();
            labels_from_map(&store, &map)?
        }
    };
    let defaults = SimilarityConfig::default();
    let sampling = match run
        .choice("sampling", a.sampling, "stratified", &["stratified", "full", "skip"])?
        .as_str()
    {
        "full" => AnosimSampling::Full,
        "skip" => AnosimSampling::Skip,
        _ => AnosimSampling::Stratified {
            per_image: run.param("per_image", a.per_image, 5)?,
            max_images: run.param("max_images", a.max_images, 1000)?,
        },
    };
    let rank_mode = match run.choice("rank_mode", a.rank_mode, "auto", &["auto", "exact", "histogram"])?.as_str() {
        "exact" => RankMode::Exact,
        "histogram" => RankMode::Histogram {
            bins: run.param("bins", a.bins, DEFAULT_HISTOGRAM_BINS)?,
        },
        _ => RankMode::Auto,
    };
    let config = SimilarityConfig {
        block_size: run.param("block_size", a.block_size, defaults.block_size)?,
        sampling,
        permutations: run.param("permutations", a.permutations, defaults.permutations)?,
        seed: run.seed,
        rank_mode,
    };
    let summary = intra_inter(&store, &labels, &config)?;
    run.write_json("similarity.json", &summary)
}

fn parse_ks(raw: &str) -> CliResult<Vec<usize>> {
    let mut ks = raw
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| usage(format!("ks: not a positive integer: {s:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage("ks: values must be at least 1"));
    }
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

fn cmd_retrieval(run: &mut Run, a: crate::RetrievalArgs) -> CliResult<()> {
    let text_path = run.require_input("text_embeddings", a.text_embeddings)?;
    let image_path = run.require_input("image_embeddings", a.image_embeddings)?;
    let text = load_store(&text_path)?;
    let images = load_store(&image_path)?;
    let default_ks = DEFAULT_KS.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let ks = parse_ks(&run.param("ks", a.ks, default_ks)?)?;
    let mode: TruthMode = run
        .choice("truth", a.truth, "material", &["material", "image"])?
        .parse()
        .map_err(usage)?;
    let search = run.opt_param::<String>("search", a.search)?;
    let top = run.param("top", a.top, 10usize)?;
    let mut snapshots = Vec::new();
    for entry in &a.snapshot {
        let parts: Vec<&str> = entry.split(',').map(str::trim).collect();
        let [name, t, i] = parts.as_slice() else {
            return Err(usage(format!("snapshot: expected NAME,TEXT_FILE,IMAGE_FILE, got {entry:?}")));
        };
        let t = run.require_input(&format!("snapshot_{name}_text"), Some(PathBuf::from(t)))?;
        let i = run.require_input(&format!("snapshot_{name}_image"), Some(PathBuf::from(i)))?;
        snapshots.push((name.to_string(), load_store(&t)?, load_store(&i)?));
    }
    let cases_path = run.input("cases", a.cases)?;
    let catalog = if cases_path.is_some() || !snapshots.is_empty() {
        Some(load_catalog(run, a.catalog)?)
    } else {
        None
    };

    let mut recall_json = None;
    if let (Some(path), Some(catalog)) = (&cases_path, &catalog) {
        let cases = read_cases(open(path)?, &source(path))?;
        let ranks = case_ranks(&text, &images, catalog, &cases, mode)?;
        let table = RecallTable::from_ranks(&ranks, &ks, mode);
        run.write_with("recall.csv", |b| table.write_csv(b))?;
        run.write_with("ranks.csv", |b| {
            let mut w = csv_writer(b);
            w.write_record(["query_key", "rank"]).map_err(csv_data)?;
            for (c, r) in cases.iter().zip(&ranks) {
                w.write_record([c.query_key.clone(), r.to_string()]).map_err(csv_data)?;
            }
            w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
        })?;
        if !snapshots.is_empty() {
            let sweep = recall_sweep(&snapshots, catalog, &cases, &ks, mode)?;
            run.write_with("sweep.csv", |b| write_sweep_csv(b, &sweep))?;
        }
        recall_json = Some(json!(table));
    } else if !snapshots.is_empty() {
        return Err(usage("retrieval: --snapshot requires --cases"));
    }

    let mut search_json = None;
    if let Some(key) = &search {
        let query = text
            .vector(key)
            .or_else(|| images.vector(key))
            .ok_or_else(|| fabrictext::Error::MissingKey(key.clone()))?;
        let hits = image_search(query, &images, top.min(images.len()))?;
        run.write_with("search.csv", |b| {
            let mut w = csv_writer(b);
            w.write_record(["rank", "image_id", "similarity"]).map_err(csv_data)?;
            for (i, (k, s)) in hits.iter().enumerate() {
                w.write_record([(i + 1).to_string(), k.clone(), s.to_string()]).map_err(csv_data)?;
            }
            w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
        })?;
        search_json = Some(json!({"query": key, "results": hits.len()}));
    }
    if recall_json.is_none() && search_json.is_none() {
        return Err(usage("retrieval: pass --cases and/or --search"));
    }
    run.write_json("recall.json", &json!({"recall": recall_json, "search": search_json}))
}

fn cmd_invariance(run: &mut Run, a: crate::InvarianceArgs) -> CliResult<()> {
    let emb_path = run.require_input("embeddings", a.embeddings)?;
    let store = load_store(&emb_path)?;
    let compare = run.input("compare", a.compare)?;
    let catalog = load_catalog(run, a.catalog)?;
    let mode: InvarianceMode = run
        .choice("mode", a.mode, "geometry", &["geometry", "lighting"])?
        .parse()
        .map_err(usage)?;
    let method = match run.choice("wilcoxon", a.wilcoxon, "auto", &["auto", "exact", "normal"])?.as_str() {
        "exact" => WilcoxonMethod::Exact,
        "normal" => WilcoxonMethod::Normal,
        _ => WilcoxonMethod::Auto,
    };
    let report = invariance(&store, &catalog, mode)?;
    run.write_with("materials.csv", |b| report.write_csv(b))?;
    if let Some(path) = compare {
        let other = invariance(&load_store(&path)?, &catalog, mode)?;
        let test = compare_invariance(&report, &other, method)?;
        run.write_json(
            "comparison.json",
            &json!({"ours_mean": report.mean, "other_mean": other.mean, "other_std": other.std, "test": test}),
        )?;
    }
    run.write_json(
        "invariance.json",
        &json!({
            "mode": report.mode,
            "mean": report.mean,
            "std": report.std,
            "materials": report.materials.len(),
            "skipped": report.skipped,
        }),
    )
}

fn read_rank_products(path: &Path) -> CliResult<Vec<RankProduct>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| fabrictext::Error::parse(&source(path), line, e.to_string()))?;
        let (Some(attribute), Some(psi)) = (row.get(0), row.get(1)) else {
            return Err(fabrictext::Error::parse(&source(path), line, "expected attribute,psi").into());
        };
        let psi = match psi.trim() {
            "" | "n/a" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|e| fabrictext::Error::parse(&source(path), line, format!("psi: {e}")))?,
            ),
        };
        out.push(RankProduct {
            attribute: attribute.trim().to_string(),
            psi,
            descriptions: 0,
        });
    }
    Ok(out)
}

fn cmd_keywords(run: &mut Run, a: crate::KeywordsArgs) -> CliResult<()> {
    let (corpus, processed) = load_text(run, a.text)?;
    let lex_path = run.require_input("lexicon", a.lexicon)?;
    let attr_path = run.require_input("attribute_csv", a.attribute_csv)?;
    let lexicon = load_lexicon(&lex_path)?;
    let set = AttributeSet::membership_only(&load_attribute_pairs(&attr_path)?)?;
    let products = match run.input("rank_product", a.rank_product)? {
        Some(p) => read_rank_products(&p)?,
        None => rank_product(&RankTable::build(&processed, &set)),
    };
    let n_desc = run.param("n_desc", a.n_desc, 5usize)?;
    let filter: BTreeSet<String> = if a.image.is_empty() {
        run.opt_param::<String>("image", None)?
            .map(|v| parse_excluded(&v))
            .unwrap_or_default()
    } else {
        let v: BTreeSet<String> = a.image.into_iter().collect();
        run.opt_param("image", Some(v.iter().cloned().collect::<Vec<_>>().join(",")))?;
        v
    };
    for id in &filter {
        if !corpus.images().iter().any(|i| &i.image_id == id) {
            return Err(fabrictext::Error::MissingKey(id.clone()).into());
        }
    }

    let by_id: BTreeMap<&str, &ProcessedDescription> =
        processed.iter().map(|p| (p.description_id.as_str(), p)).collect();
    let mut per_image: BTreeMap<&str, Vec<ProcessedDescription>> = BTreeMap::new();
    for d in corpus.valid_descriptions() {
        if let Some(p) = by_id.get(d.id.as_str()) {
            per_image.entry(d.image_id.as_str()).or_default().push((*p).clone());
        }
    }
    let images: Vec<&str> = corpus
        .images()
        .iter()
        .map(|i| i.image_id.as_str())
        .filter(|id| filter.is_empty() || filter.contains(*id))
        .collect();
    let keywords: Vec<(&str, Vec<fabrictext::retrieval::Keyword>)> = images
        .par_iter()
        .map(|id| {
            let descs = per_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
            (*id, extract_keywords(descs, &lexicon, &set, &products, n_desc))
        })
        .collect();
    run.write_with("keywords.csv", |b| {
        let mut w = csv_writer(b);
        w.write_record(["image_id", "position", "lemma", "attribute", "count", "psi"])
            .map_err(csv_data)?;
        for (id, kws) in &keywords {
            for (i, k) in kws.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    (i + 1).to_string(),
                    k.lemma.clone(),
                    k.attribute.clone(),
                    k.count.to_string(),
                    fmt_opt(k.psi),
                ])
                .map_err(csv_data)?;
            }
        }
        w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
    })
}

fn parse_offsets(raw: &str) -> CliResult<Vec<(i32, i32)>> {
    raw.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [dx, dy] => match (dx.parse(), dy.parse()) {
                    (Ok(dx), Ok(dy)) => Ok((dx, dy)),
                    _ => Err(usage(format!("offsets: bad pair {pair:?}"))),
                },
                _ => Err(usage(format!("offsets: expected dx,dy, got {pair:?}"))),
            }
        })
        .collect()
}

fn cmd_imagestats(run: &mut Run, a: crate::ImagestatsArgs) -> CliResult<()> {
    let dir = run.require_input("images", a.images)?;
    let levels = run.param("levels", a.levels, DEFAULT_LEVELS)?;
    let offsets = parse_offsets(&run.param("offsets", a.offsets, "1,0;0,1".to_string())?)?;
    let asymmetric = run.param("asymmetric", a.asymmetric.then_some(true), false)?;
    let bins = run.param("bins", a.bins, 50usize)?;
    let range = match run.opt_param::<String>("range", a.range)? {
        Some(r) => {
            let parts: Vec<&str> = r.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [lo, hi] => match (lo.parse::<f64>(), hi.parse::<f64>()) {
                    (Ok(lo), Ok(hi)) if lo < hi => Some((lo, hi)),
                    _ => return Err(usage(format!("range: expected lo,hi with lo < hi, got {r:?}"))),
                },
                _ => return Err(usage(format!("range: expected lo,hi, got {r:?}"))),
            }
        }
        None => None,
    };
    let files = image_files(&dir)?;
    if files.is_empty() {
        return Err(fabrictext::Error::InsufficientData(format!("{}: no PNG/PPM images", dir.display())).into());
    }
    let entropies = files
        .par_iter()
        .map(|f| GrayImage::load(f, levels).and_then(|img| glcm_entropy(&img, &offsets, !asymmetric)))
        .collect::<fabrictext::Result<Vec<f64>>>()?;
    let names: Vec<String> = files
        .iter()
        .map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let hist = entropy_histogram(&entropies, bins, range)?;
    run.write_with("entropy.csv", |b| {
        let mut w = csv_writer(b);
        w.write_record(["image", "entropy"]).map_err(csv_data)?;
        for (n, e) in names.iter().zip(&entropies) {
            w.write_record([n.clone(), e.to_string()]).map_err(csv_data)?;
        }
        w.flush().map_err(|e| fabrictext::Error::InvalidParameter(e.to_string()))
    })?;
    run.write_with("histogram.csv", |b| hist.write_csv(b))?;
    run.write_json(
        "imagestats.json",
        &json!({
            "images": entropies.len(),
            "levels": levels,
            "offsets": offsets,
            "symmetric": !asymmetric,
            "entropy": Summary::of(&entropies),
        }),
    )
}
