use std::fs;
use std::path::{Path, PathBuf};

use proptest::prelude::*;

use genpriv::corpus::preprocess::{clean_newsgroup, mark_target, normalize_ws, strip_html, unmark, TARGET_MARKER};
use genpriv::corpus::{
    build_prompt, export_manifest, import_manifest, load_dataset, CorpusError, Dataset, DatasetKind, TextSample,
};

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

// Golden fixtures: expected outputs worked out by hand.
const HTML_CASES: &[(&str, &str)] = &[
    ("Great movie!<br /><br />Loved it", "Great movie! Loved it"),
    ("no tags here", "no tags here"),
    ("", ""),
    ("<i>Casablanca</i> is <b>timeless</b>.", "Casablanca is timeless ."),
    ("a <a href=\"x\">link</a>   here", "a link here"),
    ("<<b>>bold", "bold"),
];

const NEWSGROUP_CASES: &[(&str, &str)] = &[
    ("From: a@b.com\nSubject: cars\n\nI saw a V8 engine", "I saw a V8 engine"),
    ("plain body only", "plain body only"),
    ("From: a@b.com\nSubject: x\n\n", ""),
    ("From: x@y.org (X)\nSubject: Re: engines\nOrganization: Z\n\nMail me at x@y.org about it.", "Mail me at about it."),
];

#[test]
fn strip_html_golden() {
    for (input, expected) in HTML_CASES {
        assert_eq!(strip_html(input), *expected, "input {input:?}");
    }
}

#[test]
fn clean_newsgroup_golden() {
    for (input, expected) in NEWSGROUP_CASES {
        assert_eq!(clean_newsgroup(input), *expected, "input {input:?}");
    }
}

#[test]
fn mark_target_golden() {
    let s = "The adjudication was swift";
    assert_eq!(mark_target(s, (4, 16), "[SEP]").unwrap(), "The [SEP] adjudication [SEP] was swift");
    assert_eq!(mark_target(s, (0, 26), "[SEP]").unwrap(), format!("[SEP] {s} [SEP]"));
    assert!(matches!(mark_target(s, (5, 3), "[SEP]"), Err(CorpusError::InvalidSpan { .. })));
    assert!(mark_target(s, (0, 27), "[SEP]").is_err());
}

#[test]
fn fixtures_are_idempotent() {
    for (input, _) in HTML_CASES {
        let once = strip_html(input);
        assert_eq!(strip_html(&once), once);
    }
    for (input, _) in NEWSGROUP_CASES {
        let once = clean_newsgroup(input);
        assert_eq!(clean_newsgroup(&once), once);
    }
}

proptest! {
    #[test]
    fn strip_html_idempotent(s in "[a-z <>/=\"!.\n]{0,60}") {
        let once = strip_html(&s);
        prop_assert_eq!(strip_html(&once), once);
    }

    #[test]
    fn clean_newsgroup_idempotent(s in "([A-Z][a-z]{1,6}: [a-z@.]{1,10}\n){0,3}\n?[a-z @.:\n]{0,40}") {
        let once = clean_newsgroup(&s);
        prop_assert_eq!(clean_newsgroup(&once), once);
    }

    // Annotated targets are whole words or phrases; a span that splits a
    // word cannot round-trip through space-delimited markers.
    #[test]
    fn mark_target_roundtrip(words in prop::collection::vec("[a-zé]{1,8}", 1..8), a in 0usize..8, len in 1usize..4) {
        let sentence = words.join("  ");
        let first = a % words.len();
        let last = (first + len).min(words.len());
        let start: usize = words[..first].iter().map(|w| w.chars().count() + 2).sum();
        let end = start + words[first..last].join("  ").chars().count();
        let marked = mark_target(&sentence, (start, end), TARGET_MARKER).unwrap();
        prop_assert_eq!(unmark(&marked, TARGET_MARKER), normalize_ws(&sentence));
        prop_assert_eq!(marked.matches(TARGET_MARKER).count(), 2);
    }
}

fn sample(id: &str, clean: &str, label: usize, span: Option<(usize, usize)>) -> TextSample {
    TextSample {
        id: id.into(),
        raw_text: clean.into(),
        clean_text: clean.into(),
        prompt_text: clean.into(),
        label,
        target_span: span,
        prompt_truncated: false,
    }
}

#[test]
fn prompts_per_dataset_kind() {
    let cwi = sample("c", "The adjudication was swift", 1, Some((4, 16)));
    assert_eq!(build_prompt(&cwi, DatasetKind::EnglishNews).unwrap().0, "adjudication");
    let imdb = sample("i", &strip_html("Great movie!<br />Loved it"), 1, None);
    assert_eq!(build_prompt(&imdb, DatasetKind::Imdb).unwrap().0, "Great movie! Loved it");
    let ng = sample("n", &clean_newsgroup("From: a@b.com\nSubject: cars\n\nI saw a V8 engine"), 0, None);
    assert_eq!(build_prompt(&ng, DatasetKind::Newsgroups).unwrap().0, "I saw a V8 engine");
    let long = sample("l", &vec!["w"; 300].join(" "), 0, None);
    let (p, truncated) = build_prompt(&long, DatasetKind::Generic).unwrap();
    assert!(truncated);
    assert_eq!(p.split(' ').count(), 256);
    assert!(build_prompt(&sample("e", "", 0, None), DatasetKind::Generic).is_err());
}

fn imdb_fixture(root: &Path) {
    for split in ["train", "test"] {
        for (c, class) in ["neg", "pos"].iter().enumerate() {
            for i in 0..10 {
                write(
                    &root.join(format!("aclImdb/{split}/{class}/{i}_{}.txt", 1 + c * 9)),
                    &format!("Review {i} of {split} {class}.<br /><br />It was <b>fine</b>."),
                );
            }
        }
    }
    write(&root.join("aclImdb/train/pos/urls.lst"), "ignored");
}

#[test]
fn imdb_layout() {
    let dir = tempfile::tempdir().unwrap();
    imdb_fixture(dir.path());
    let ds = load_dataset(dir.path(), DatasetKind::Imdb).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (18, 2, 20));
    assert_eq!(ds.k, 2);
    for (_, s) in ds.iter() {
        assert!(!s.clean_text.contains('<'), "{}", s.clean_text);
        assert_eq!(s.prompt_text, s.clean_text);
    }
    // the carve-out is seeded
    assert_eq!(load_dataset(dir.path(), DatasetKind::Imdb).unwrap(), ds);
}

#[test]
fn newsgroups_layout() {
    let dir = tempfile::tempdir().unwrap();
    for cat in ["rec.autos", "sci.space"] {
        for i in 0..20 {
            write(
                &dir.path().join(format!("20news-18828/{cat}/{}", 100 + i)),
                &format!("From: u{i}@host.edu\nSubject: post {i}\n\nBody {i} about {cat}, write to u{i}@host.edu"),
            );
        }
    }
    // a header-only post is rejected at load time
    write(&dir.path().join("20news-18828/sci.space/999"), "From: a@b.com\nSubject: x\n\n");
    let ds = load_dataset(dir.path(), DatasetKind::Newsgroups).unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!(ds.class_names, ["rec.autos", "sci.space"]);
    for (_, s) in ds.iter() {
        assert!(!s.clean_text.contains("From:") && !s.clean_text.contains('@'), "{}", s.clean_text);
        assert!(s.clean_text.starts_with("Body"));
    }
}

fn cwi_line(id: usize, sentence: &str, target: &str, label: u8) -> String {
    let start = sentence.find(target).unwrap();
    let start_c = sentence[..start].chars().count();
    let end_c = start_c + target.chars().count();
    format!("{id}\t{sentence}\t{start_c}\t{end_c}\t{target}\t10\t10\t0\t0\t{label}\t0.0\n")
}

#[test]
fn complex_word_layout() {
    let dir = tempfile::tempdir().unwrap();
    for part in ["Train", "Dev", "Test"] {
        let mut text = String::new();
        for i in 0..4 {
            text.push_str(&cwi_line(i, "The adjudication was swift", "adjudication", 1));
            text.push_str(&cwi_line(i, "The café was open", "café", 0));
        }
        write(&dir.path().join(format!("english/WikiNews_{part}.tsv")), &text);
    }
    let ds = load_dataset(dir.path(), DatasetKind::EnglishWikinews).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (8, 8, 8));
    let s = &ds.train[0];
    assert_eq!(s.prompt_text, "adjudication");
    assert_eq!(s.model_text(), "The [SEP] adjudication [SEP] was swift");
    assert_eq!(ds.train[1].prompt_text, "café");
    // a News file set is required for the other kind
    assert!(matches!(load_dataset(dir.path(), DatasetKind::EnglishNews), Err(CorpusError::Missing(_))));

    write(&dir.path().join("english/WikiNews_Train.tsv"), "1\ttoo\tfew\n");
    assert!(matches!(load_dataset(dir.path(), DatasetKind::EnglishWikinews), Err(CorpusError::Malformed { .. })));
}

#[test]
fn missing_sources_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("nope"), DatasetKind::Imdb), Err(CorpusError::Missing(_))));
    assert!(load_dataset(dir.path(), DatasetKind::Generic).is_err());
}

fn generic_fixture(root: &Path) {
    write(&root.join("train.tsv"), "pos\tgood film\nneg\tbad film\npos\tgreat\n");
    write(&root.join("val.tsv"), "neg\tawful\n");
    write(&root.join("test.tsv"), "pos\tlovely\n\nneg\tdull\n");
}

#[test]
fn manifest_roundtrip_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    generic_fixture(dir.path());
    let ds = load_dataset(dir.path(), DatasetKind::Generic).unwrap();
    assert_eq!(ds.class_names, ["neg", "pos"]);
    let path = dir.path().join("m.jsonl");
    export_manifest(&ds, &path).unwrap();
    assert_eq!(import_manifest(&path).unwrap(), ds);

    // label out of range
    let text = fs::read_to_string(&path).unwrap().replace("\"label\":1", "\"label\":7");
    fs::write(&path, text).unwrap();
    assert!(import_manifest(&path).is_err());

    // an empty dataset exports, but does not import
    let empty = Dataset { train: vec![], val: vec![], test: vec![], ..ds };
    export_manifest(&empty, &path).unwrap();
    assert!(!fs::read_to_string(&path).unwrap().is_empty());
    assert!(import_manifest(&path).is_err());
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    let text = "[a-zA-Z0-9 ,.!?éü\"\\\\\t]{1,30}";
    let samples = prop::collection::vec((text, 0usize..3, any::<bool>(), any::<bool>()), 3..12);
    samples.prop_map(|rows| {
        let mut ds = Dataset {
            name: "prop".into(),
            kind: DatasetKind::Generic,
            k: 3,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            train: vec![],
            val: vec![],
            test: vec![],
        };
        for (i, (t, label, span, trunc)) in rows.into_iter().enumerate() {
            let t = format!("x{t}");
            let n = t.chars().count();
            let mut s = sample(&format!("s{i}"), &t, label, span.then_some((0, n)));
            s.raw_text = format!("<p>{t}</p>");
            s.prompt_truncated = trunc;
            match i % 3 {
                0 => ds.train.push(s),
                1 => ds.val.push(s),
                _ => ds.test.push(s),
            }
        }
        for c in 0..3 {
            ds.train.push(sample(&format!("c{c}"), "filler", c, None));
        }
        ds
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn manifest_roundtrip_is_identity(ds in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        export_manifest(&ds, &path).unwrap();
        prop_assert_eq!(import_manifest(&path).unwrap(), ds);
    }
}

/// Public corpora are looked up under `$GENPRIV_CORPORA` (one directory per
/// corpus: `aclImdb`, `20news-18828`, `cwi`).
fn corpus_root(name: &str) -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os("GENPRIV_CORPORA")?).join(name);
    root.exists().then_some(root)
}

#[test]
fn public_split_cardinalities() {
    let cases: [(&str, DatasetKind, [usize; 3]); 3] = [
        ("aclImdb", DatasetKind::Imdb, [22_500, 2_500, 25_000]),
        ("20news-18828", DatasetKind::Newsgroups, [11_353, 1_261, 6_214]),
        ("cwi", DatasetKind::EnglishWikinews, [7_746, 870, 1_287]),
    ];
    for (dir, kind, expected) in cases {
        let Some(root) = corpus_root(dir) else {
            eprintln!("warning: {dir} not found under $GENPRIV_CORPORA; skipping {kind} cardinality check");
            continue;
        };
        let ds = load_dataset(&root, kind).unwrap();
        assert_eq!([ds.train.len(), ds.val.len(), ds.test.len()], expected, "{kind}");
    }
}
