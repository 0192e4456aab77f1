use asrlab::data::generate_synthetic_corpus;
use asrlab::decoding::{rnnt_beam_decode, rnnt_greedy_decode};
use asrlab::harness::*;
use asrlab::models::Model;

#[test]
fn inspect_rnnt_decodes() {
    let mut cfg = ExperimentConfig::default_for(Family::Rnnt, false);
    cfg.steps = 18000;
    let out = train(&cfg).unwrap();
    let spec = cfg.task_spec();
    let corpus = generate_synthetic_corpus(&spec, 20).unwrap();
    let Model::Rnnt(m) = &out.model else { unreachable!() };
    for utt in corpus.iter().take(5) {
        let feats = model_features(&cfg, utt).unwrap();
        let (beam, bs) = rnnt_beam_decode(m, &feats, 4, cfg.max_len).unwrap();
        let (greedy, gs) = rnnt_greedy_decode(m, &feats, cfg.max_len).unwrap();
        eprintln!("ref    {:?}", utt.tokens);
        eprintln!("beam   {:?} ({bs:.1})", beam);
        eprintln!("greedy {:?} ({gs:.1})", greedy);
    }
}
