use tensynth::bench;
use tensynth::nn::{SeqHyper, SeqModel};
use tensynth::search::{
    rank_sequences, synth_first_of_seq, synth_full_seq, Limits, SearchStats, Status,
};
use tensynth::{OpCode, Registry, TaskSpec, Tensor};

fn small() -> SeqHyper {
    SeqHyper {
        ffn_hidden: 4,
        embed: 3,
        hidden: 2,
    }
}

/// A model with zero weights whose every step predicts from `bias` alone.
/// The last bias entry is STOP.
fn biased(ops: &str, bias: &[f32]) -> SeqModel<f32> {
    let mut m = SeqModel::zeros(Registry::parse(ops).unwrap(), small());
    assert_eq!(bias.len(), m.classes());
    for (j, &b) in bias.iter().enumerate() {
        m.head.b[[0, j]] = b;
    }
    m
}

fn benchmark(id: &str) -> TaskSpec {
    bench::core_suite()
        .into_iter()
        .find(|b| b.id == id)
        .unwrap()
        .spec()
}

#[test]
fn full_seq_fills_the_unsqueeze_eq_sequence() {
    let spec = benchmark("SO06");
    // uniform over ops, STOP favoured so short sequences rank first
    let model = biased("unsqueeze,eq", &[0.0, 0.0, 1.0]);
    let limits = Limits {
        beam_width: 8,
        ..Limits::default()
    };
    let mut stats = SearchStats::default();
    let ranked = rank_sequences(&spec, &model, limits.beam_width, &mut stats);
    assert!(ranked
        .iter()
        .any(|h| h.ops == [OpCode::Unsqueeze, OpCode::Eq]));
    let r = synth_full_seq(&spec, &model, &limits);
    let program = r.program.unwrap();
    assert!(spec.is_solved_by(&program));
    assert_eq!(program.op_sequence(), [OpCode::Unsqueeze, OpCode::Eq]);
}

#[test]
fn wrong_rankings_end_not_found() {
    // only transposes are likely; the output needs an addition
    let model = biased("add,transpose", &[-20.0, 5.0, 4.0]);
    let spec = TaskSpec {
        inputs: vec![Tensor::vector(&[1, 2])],
        output: Tensor::vector(&[2, 4]),
    };
    let r = synth_full_seq(&spec, &model, &Limits::default());
    assert_eq!(r.status, Status::NotFound);
    assert!(r.stats.model_invocations >= 1);
    let fallback = Limits {
        fallback: true,
        ..Limits::default()
    };
    let r = synth_full_seq(&spec, &model, &fallback);
    assert_eq!(r.program.unwrap().render(), "add(in1, in1)");
}

#[test]
fn first_of_seq_solves_one_step_spec_with_one_query() {
    let spec = benchmark("SO42");
    let model = biased("add,eq,mul", &[0.0, 3.0, 0.0, 0.0]);
    let r = synth_first_of_seq(&spec, &model, &Limits::default());
    assert_eq!(r.program.unwrap().render(), "eq(in1, in2)");
    assert_eq!(r.stats.model_invocations, 1);
}

#[test]
fn first_of_seq_executes_and_requeries() {
    // where(lt(in1, 1), in1, 1): lt at the root, where on the intermediate
    let spec = TaskSpec {
        inputs: vec![Tensor::vector(&[3, 0, -2, 5, 1])],
        output: Tensor::vector(&[1, 0, -2, 1, 1]),
    };
    let model = biased("lt,where", &[1.0, 1.0, -5.0]);
    let r = synth_first_of_seq(&spec, &model, &Limits::default());
    let program = r.program.unwrap();
    assert!(spec.is_solved_by(&program));
    assert_eq!(program.op_sequence(), [OpCode::Lt, OpCode::Where]);
    assert!(r.stats.model_invocations >= 2);
}

#[test]
fn base_hit_skips_the_model() {
    let model = biased("add", &[0.0, 0.0]);
    let spec = TaskSpec {
        inputs: vec![Tensor::vector(&[4, 5])],
        output: Tensor::vector(&[4, 5]),
    };
    for r in [
        synth_full_seq(&spec, &model, &Limits::default()),
        synth_first_of_seq(&spec, &model, &Limits::default()),
    ] {
        assert_eq!(r.program.unwrap().render(), "in1");
        assert_eq!(r.stats.model_invocations, 0);
    }
}
