use std::collections::{BTreeMap, BTreeSet, HashSet};

use joint_ood::data::synthetic::{generate_synthetic, Grammar, OodSource, SyntheticConfig};
use joint_ood::data::OOD_LABEL;

fn config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_domains: 10,
        train_size: 2000,
        dev_size: 400,
        test_size: 400,
        ood_ratio: 0.25,
        seed,
    }
}

#[test]
fn domain_vocabularies_share_only_function_words() {
    let grammar = Grammar::builtin().unwrap();
    let corpus = generate_synthetic(&grammar, &config(7)).unwrap();
    let mut by_domain: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for split in [&corpus.train, &corpus.dev, &corpus.test] {
        for u in &split.utterances {
            if split.is_ood(u) {
                continue;
            }
            let words = by_domain.entry(split.labels.name(u.label)).or_default();
            words.extend(u.tokens.iter().map(String::as_str));
        }
    }
    assert_eq!(by_domain.len(), 10);
    let names: Vec<&str> = by_domain.keys().copied().collect();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            for w in by_domain[a].intersection(&by_domain[b]) {
                assert!(grammar.function_words.contains(*w), "{a} and {b} share {w:?}");
            }
        }
    }
}

#[test]
fn splits_have_requested_sizes_ratio_and_sources() {
    let corpus = generate_synthetic(&Grammar::builtin().unwrap(), &config(3)).unwrap();
    for (split, n) in [(&corpus.train, 2000), (&corpus.dev, 400), (&corpus.test, 400)] {
        assert_eq!(split.len(), n);
        assert_eq!(split.count_ood(), n / 4);
        assert_eq!(split.labels.num_domains(), 10);
        let per_domain = split.utterances.iter().filter(|u| !split.is_ood(u)).fold(BTreeMap::new(), |mut m, u| {
            *m.entry(u.label).or_insert(0usize) += 1;
            m
        });
        let (lo, hi) = (per_domain.values().min().unwrap(), per_domain.values().max().unwrap());
        assert!(hi - lo <= 1, "domain counts {per_domain:?}");
    }
    for split in ["train", "dev", "test"] {
        let counts: Vec<usize> = [OodSource::Grammar, OodSource::Shuffled, OodSource::Corrupted]
            .iter()
            .map(|s| {
                corpus
                    .ood_counts
                    .iter()
                    .find(|(n, src, _)| *n == split && src == s)
                    .map_or(0, |c| c.2)
            })
            .collect();
        let total: usize = counts.iter().sum();
        assert!(counts.iter().all(|&c| c * 3 + 3 >= total && c * 3 <= total + 3), "{split}: {counts:?}");
    }
    let all: Vec<&str> = [&corpus.train, &corpus.dev, &corpus.test]
        .iter()
        .flat_map(|d| d.utterances.iter().map(|u| u.text.as_str()))
        .collect();
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), all.len(), "utterances repeat across splits");
}

#[test]
fn generation_is_seed_deterministic() {
    let g = Grammar::builtin().unwrap();
    let a = generate_synthetic(&g, &config(11)).unwrap();
    let b = generate_synthetic(&g, &config(11)).unwrap();
    let c = generate_synthetic(&g, &config(12)).unwrap();
    let texts = |x: &joint_ood::data::synthetic::Corpus| -> Vec<String> {
        x.train.utterances.iter().map(|u| u.text.clone()).collect()
    };
    assert_eq!(texts(&a), texts(&b));
    assert_eq!(a.manifest(), b.manifest());
    assert_ne!(texts(&a), texts(&c));
}

#[test]
fn ood_utterances_are_not_derivable_in_domain() {
    let g = Grammar::builtin().unwrap();
    let corpus = generate_synthetic(&g, &config(5)).unwrap();
    let ind_vocab = g.ind_vocabulary();
    for u in &corpus.train.utterances {
        if corpus.train.labels.name(u.label) != OOD_LABEL {
            assert!(g.domains.iter().any(|d| d.name == corpus.train.labels.name(u.label) && d.derives(&u.tokens)));
            continue;
        }
        let in_vocab = u.tokens.iter().all(|t| ind_vocab.contains(t));
        if in_vocab {
            assert!(!g.domains[..10].iter().any(|d| d.derives(&u.tokens)), "{:?}", u.text);
        }
    }
}

#[test]
fn builtin_grammar_has_twelve_domains_and_rejects_one() {
    let g = Grammar::builtin().unwrap();
    assert_eq!(g.domains.len(), 12);
    let bad = SyntheticConfig {
        num_domains: 1,
        ..config(1)
    };
    assert!(generate_synthetic(&g, &bad).is_err());
    let too_many = SyntheticConfig {
        num_domains: 13,
        ..config(1)
    };
    assert!(generate_synthetic(&g, &too_many).is_err());
}
