use std::collections::HashSet;

use proptest::prelude::*;
use taskaware::data::tokenize::SEP_TOKEN;
use taskaware::data::{
    holdout_split, input_tokens, kfold, load_tsv, synthesize_tasks, tokenize, write_tsv, InputMode,
    SynthConfig, TaskSpec, TsvSchema, Vocabulary, UNK_ID,
};
use taskaware::evaluation::Metric;

fn task(description: &str) -> TaskSpec {
    TaskSpec::new(
        "t",
        description,
        &["no", "yes"],
        Some("yes"),
        Metric::F1Positive,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn kfold_partitions_with_balanced_sizes(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let items: Vec<usize> = (0..n).collect();
        let folds = kfold(&items, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(kfold(&items, k, seed).unwrap(), folds);
    }

    #[test]
    fn holdout_is_a_split(n in 2usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (kept, held) = holdout_split(&items, frac, seed).unwrap();
        prop_assert!(!kept.is_empty() && !held.is_empty());
        let mut all = [kept, held].concat();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn task_aware_input_keeps_the_whole_description(
        desc in prop::collection::vec("[a-z]{1,6}", 1..6),
        text in prop::collection::vec("[a-z]{1,6}", 0..40),
        extra in 1usize..30,
    ) {
        let description = desc.join(" ");
        let spec = task(&description);
        let max_len = desc.len() + extra;
        let out = input_tokens(&text.join(" "), &spec, InputMode::TaskAware, max_len).unwrap();
        prop_assert!(out.len() <= max_len);
        prop_assert_eq!(&out[..desc.len()], &desc[..]);
        prop_assert_eq!(&out[desc.len()], SEP_TOKEN);
        let kept = out.len() - desc.len() - 1;
        prop_assert_eq!(kept, text.len().min(max_len - desc.len() - 1));
        prop_assert_eq!(&out[desc.len() + 1..], &text[..kept]);
        let plain = input_tokens(&text.join(" "), &spec, InputMode::TextOnly, max_len).unwrap();
        prop_assert_eq!(&plain[..], &text[..text.len().min(max_len)]);
    }

    #[test]
    fn tokens_never_contain_whitespace_or_forge_sentinels(s in "\\PC{0,60}") {
        for t in tokenize(&s) {
            prop_assert!(!t.is_empty() && !t.chars().any(char::is_whitespace));
            prop_assert!(t != SEP_TOKEN);
        }
    }
}

#[test]
fn description_longer_than_max_len_is_an_error() {
    let spec = task("a b c d");
    let err = input_tokens("x", &spec, InputMode::TaskAware, 4).unwrap_err();
    assert!(err.to_string().contains("max_len"), "{err}");
    assert_eq!(
        input_tokens("x", &spec, InputMode::TaskAware, 6)
            .unwrap()
            .len(),
        6
    );
}

#[test]
fn vocabulary_respects_min_count_and_reserved_ids() {
    let streams = [tokenize("a b a c"), tokenize("a b d")];
    let v = Vocabulary::build(streams.iter().map(Vec::as_slice), 2).unwrap();
    assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
    assert_eq!(v.id("c"), UNK_ID);
    assert!(Vocabulary::build(std::iter::empty(), 1).is_err());
}

#[test]
fn tsv_round_trip_and_language_filter() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthesize_tasks(&SynthConfig::new(20, 0.3, 4)).unwrap();
    let path = dir.path().join("a.tsv");
    write_tsv(&path, &corpus.tasks[0], &corpus.samples[0]).unwrap();
    let back = load_tsv(&path, &corpus.tasks[0], &TsvSchema::default()).unwrap();
    assert_eq!(back, corpus.samples[0]);

    let spec = task("d");
    let path = dir.path().join("b.tsv");
    std::fs::write(
        &path,
        "id\ttext\tlabel\tlanguage\n1\thola\tyes\tes\n2\thello\tno\ten\n",
    )
    .unwrap();
    let es = load_tsv(&path, &spec, &TsvSchema::default()).unwrap();
    assert_eq!(es.len(), 1);
    assert_eq!((es[0].id.as_str(), es[0].label), ("1", 1));
    let all = load_tsv(&path, &spec, &TsvSchema { language: None }).unwrap();
    assert_eq!(all.len(), 2);

    std::fs::write(&path, "id\ttext\tlabel\n1\thola\tmaybe\n").unwrap();
    let err = load_tsv(&path, &spec, &TsvSchema::default())
        .unwrap_err()
        .to_string();
    assert!(err.contains("b.tsv") && err.contains("maybe"), "{err}");
}

#[test]
fn synthetic_ids_are_unique() {
    let corpus = synthesize_tasks(&SynthConfig::new(300, 0.6, 8)).unwrap();
    let ids: HashSet<&str> = corpus
        .samples
        .iter()
        .flatten()
        .map(|s| s.id.as_str())
        .collect();
    assert_eq!(ids.len(), 600);
}
