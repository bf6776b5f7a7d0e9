use super::*;
use crate::model::ModelConfig;
use crate::params::Params;
use crate::prompt::PromptConfig;
use crate::stpt::StptConfig;
use proptest::prelude::*;

fn tiny() -> Model<f32> {
    let config = ModelConfig {
        stpt: StptConfig { layers: 1, channels: 8, heads: 2, vocab: 6, frames: 3, grid_h: 4, grid_w: 4, ..Default::default() },
        prompt: PromptConfig { text_len: 2, text_vocab: 16, text_channels: 4 },
    };
    Model::init(config, 5).unwrap()
}

fn geom() -> Geometry {
    Geometry { frames: 3, th: 4, tw: 4, patch_size: 8, vocab: 6 }
}

fn source() -> TokenGrid {
    TokenGrid::new(3, 4, 4, 6, (0..48).map(|i| (i * 7 % 6) as u32).collect()).unwrap()
}

fn prompt(m: &Model<f32>) -> PromptInput {
    PromptInput::new(Some("a red square moving east"), Some(ActionTrack::constant(3, 0.2, 0.5)), &m.config.prompt)
}

#[test]
fn cfg_examples() {
    let c = [2.0f64, -1.5, 0.25];
    let u = [1.0f64, 3.0, -7.0];
    assert_eq!(cfg_logits(&c, &u, 0.0).unwrap(), c);
    for beta in [0.0, 0.3, 1.0, 7.5] {
        assert_eq!(cfg_logits(&c, &c, beta).unwrap(), c);
    }
    assert_eq!(cfg_logits(&[2.0f64], &[1.0], 3.0).unwrap(), [5.0]);
    assert!(cfg_logits(&c, &u[..2], 1.0).is_err());
}

#[test]
fn pass_counts_follow_guidance() {
    let m = tiny();
    let init = TokenGrid::masked(3, 4, 4, 6);
    for (beta, passes) in [(0.0, 5), (2.0, 10)] {
        let cfg = DecodeConfig { steps: 5, guidance: beta, ..Default::default() };
        let (out, r) = parallel_decode(&m, &init, &prompt(&m), Mode::Video, &cfg).unwrap();
        assert_eq!(r.forward_passes, passes);
        assert_eq!(r.steps, 5);
        assert_eq!(out.masked_count(), 0);
    }
}

#[test]
fn report_matches_per_frame_schedule() {
    let m = tiny();
    let t = build_task_mask(Task::I2v, geom(), &TaskInputs { source: Some(source()), ..Default::default() }).unwrap();
    let cfg = DecodeConfig { steps: 4, ..Default::default() };
    let (_, r) = parallel_decode(&m, &t.grid, &prompt(&m), Mode::Video, &cfg).unwrap();
    let per_frame = crate::masking::inference_unmask_counts(16, 4).unwrap().counts;
    let expect: Vec<usize> = per_frame.iter().map(|c| 2 * c).collect();
    assert_eq!(r.unmasked_per_step, expect);
}

#[test]
fn decoding_preserves_known_tokens_and_is_deterministic() {
    let m = tiny();
    let inputs = TaskInputs { source: Some(source()), ratio: Some(0.5), seed: 3, ..Default::default() };
    for task in [Task::I2v, Task::Stylize] {
        let t = build_task_mask(task, geom(), &inputs).unwrap();
        for selection in [Selection::PerFrame, Selection::Global] {
            let cfg = DecodeConfig { steps: 3, guidance: 1.5, seed: 11, selection, ..Default::default() };
            let (a, _) = parallel_decode(&m, &t.grid, &prompt(&m), Mode::Video, &cfg).unwrap();
            let (b, _) = parallel_decode(&m, &t.grid, &prompt(&m), Mode::Video, &cfg).unwrap();
            assert_eq!(a, b);
            for (i, &k) in t.known.iter().enumerate() {
                if k {
                    assert_eq!(a.tokens[i], t.grid.tokens[i]);
                }
            }
            assert_eq!(a.masked_count(), 0);
        }
    }
}

#[test]
fn infeasible_schedules_are_rejected() {
    let m = tiny();
    let mut init = source();
    init.tokens[0] = init.mask_id();
    init.tokens[1] = init.mask_id();
    let cfg = DecodeConfig { steps: 3, ..Default::default() };
    assert!(matches!(parallel_decode(&m, &init, &prompt(&m), Mode::Video, &cfg), Err(Error::MoreStepsThanMasked { .. })));
    assert!(parallel_decode(&m, &source(), &prompt(&m), Mode::Video, &cfg).is_err());
    let bad = DecodeConfig { steps: 0, ..Default::default() };
    assert!(parallel_decode(&m, &TokenGrid::masked(3, 4, 4, 6), &prompt(&m), Mode::Video, &bad).is_err());
}

#[test]
fn zero_guidance_ignores_the_null_prompt() {
    let m = tiny();
    let mut other = m.clone();
    other.params.prompt.null_text.data.iter_mut().for_each(|v| *v = 9.0);
    other.params.prompt.null_action.data.iter_mut().for_each(|v| *v = -9.0);
    let init = TokenGrid::masked(3, 4, 4, 6);
    let cfg = DecodeConfig { steps: 4, guidance: 0.0, seed: 2, ..Default::default() };
    let (a, ra) = parallel_decode(&m, &init, &prompt(&m), Mode::Video, &cfg).unwrap();
    let (b, rb) = parallel_decode(&other, &init, &prompt(&m), Mode::Video, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!((ra.forward_passes, rb.forward_passes), (4, 4));
    let guided = DecodeConfig { guidance: 1.0, ..cfg };
    let (c, _) = parallel_decode(&m, &init, &prompt(&m), Mode::Video, &guided).unwrap();
    let (d, _) = parallel_decode(&other, &init, &prompt(&m), Mode::Video, &guided).unwrap();
    assert_ne!(c, d);
}

#[test]
fn autoregressive_counts() {
    let m = tiny();
    let t = build_task_mask(Task::I2v, geom(), &TaskInputs { source: Some(source()), ..Default::default() }).unwrap();
    let cfg = DecodeConfig { temperature: 0.0, ..Default::default() };
    let (out, r) = autoregressive_decode(&m, &t.grid, &prompt(&m), Mode::Video, &cfg).unwrap();
    assert_eq!(r.forward_passes, 32);
    assert_eq!(out.masked_count(), 0);
    assert_eq!(out.tokens[..16], source().tokens[..16]);
    let guided = DecodeConfig { guidance: 1.0, ..cfg.clone() };
    assert_eq!(autoregressive_decode(&m, &t.grid, &prompt(&m), Mode::Video, &guided).unwrap().1.forward_passes, 64);
    let (same, r) = autoregressive_decode(&m, &source(), &prompt(&m), Mode::Video, &cfg).unwrap();
    assert_eq!((same, r.forward_passes), (source(), 0));
}

#[test]
fn bench_reports_pass_ratio() {
    let m = tiny();
    let cfg = DecodeConfig { steps: 4, ..Default::default() };
    let r = bench_decode(&m, 3, &cfg).unwrap();
    assert_eq!(r.masked_tokens, 48);
    assert_eq!(r.parallel.forward_passes, 4);
    assert_eq!(r.autoregressive.forward_passes, 48);
    assert_eq!(r.pass_ratio, 12.0);
    assert_eq!(r.diffusion_reference_steps, 30);
}

#[test]
fn task_masks() {
    let g = Geometry { frames: 8, th: 8, tw: 8, patch_size: 8, vocab: 6 };
    let src = TokenGrid::new(8, 8, 8, 6, (0..512).map(|i| (i % 6) as u32).collect()).unwrap();
    let t2v = build_task_mask(Task::T2v, g, &TaskInputs::default()).unwrap();
    assert_eq!(t2v.grid.masked_count(), 512);

    let inputs = TaskInputs { source: Some(src.clone()), ..Default::default() };
    let i2v = build_task_mask(Task::I2v, g, &inputs).unwrap();
    let known: Vec<usize> = (0..512).filter(|&i| i2v.known[i]).collect();
    assert_eq!(known, (0..64).collect::<Vec<_>>());
    assert_eq!(i2v.grid.tokens[..64], src.tokens[..64]);

    let inputs = TaskInputs { source: Some(src.clone()), ratio: Some(0.5), seed: 4, ..Default::default() };
    let st = build_task_mask(Task::Stylize, g, &inputs).unwrap();
    for n in 0..8 {
        assert_eq!(st.grid.frame_masked_count(n), 32);
        assert_eq!(st.known[n * 64..(n + 1) * 64], st.known[..64]);
    }

    // Pixels 10..=20 horizontally and 0..=7 vertically touch token columns 1 and 2 of row 0.
    let region = Rect { x: 10, y: 0, width: 11, height: 8 };
    let inputs = TaskInputs { source: Some(src.clone()), region: Some(region), ..Default::default() };
    let ip = build_task_mask(Task::Inpaint, g, &inputs).unwrap();
    for n in 0..8 {
        let masked: Vec<usize> = (0..64).filter(|&p| !ip.known[n * 64 + p]).collect();
        assert_eq!(masked, vec![1, 2]);
    }

    let track = ActionTrack::constant(8, 0.1, 0.5);
    let inputs = TaskInputs { source: Some(src), actions: Some(track.clone()), ..Default::default() };
    let a2v = build_task_mask(Task::A2v, g, &inputs).unwrap();
    assert_eq!(a2v.known, i2v.known);
    assert_eq!(a2v.actions, Some(track));
}

#[test]
fn missing_task_inputs_are_named() {
    let g = geom();
    let cases = [
        (Task::I2v, TaskInputs::default(), "source"),
        (Task::A2v, TaskInputs { source: Some(source()), ..Default::default() }, "actions"),
        (Task::Inpaint, TaskInputs { source: Some(source()), ..Default::default() }, "region"),
        (Task::Stylize, TaskInputs { source: Some(source()), ..Default::default() }, "ratio"),
        (Task::Stylize, TaskInputs { ratio: Some(0.3), ..Default::default() }, "source"),
    ];
    for (task, inputs, field) in cases {
        let err = build_task_mask(task, g, &inputs).unwrap_err();
        assert!(err.to_string().contains(&format!("`{field}`")), "{task:?}: {err}");
        assert!(err.is_validation());
    }
    assert!("t2x".parse::<Task>().is_err());
    assert_eq!("a2v".parse::<Task>().unwrap(), Task::A2v);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn masked_set_shrinks_every_step(steps in 1usize..6, seed in 0u64..100, known in 0usize..10) {
        let m = tiny();
        let mut init = TokenGrid::masked(3, 4, 4, 6);
        for n in 0..3 {
            for p in 0..known {
                init.tokens[n * 16 + p] = (p % 6) as u32;
            }
        }
        let cfg = DecodeConfig { steps, seed, guidance: 0.5, ..Default::default() };
        let (out, r) = parallel_decode(&m, &init, &prompt(&m), Mode::Video, &cfg).unwrap();
        prop_assert_eq!(out.masked_count(), 0);
        prop_assert_eq!(r.unmasked_per_step.len(), steps);
        prop_assert!(r.unmasked_per_step.iter().all(|&c| c >= 3));
        prop_assert_eq!(r.unmasked_per_step.iter().sum::<usize>(), init.masked_count());
        for n in 0..3 {
            for p in 0..known {
                prop_assert_eq!(out.tokens[n * 16 + p], (p % 6) as u32);
            }
        }
        let _ = m.params.param_count();
    }
}
