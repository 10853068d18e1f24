use ecolink_core::eval::ablation_report;
use ecolink_core::fixtures::{generate_demo_corpus, DEMO_SEED};
use ecolink_core::{Backends, LocalHashEmbedder, Mode, PipelineConfig};

#[test]
fn context_improves_hits_at_five_on_demo_corpus() {
    let c = generate_demo_corpus(DEMO_SEED);
    let embedder = LocalHashEmbedder::new(256).unwrap();
    let config = PipelineConfig::default();
    let backends = Backends::<f32> {
        embedder: &embedder,
        llm: Some(&c.canned),
    };
    let report = ablation_report(
        &c.bom,
        &c.datasheets,
        &c.activities,
        &c.gold,
        &config,
        backends,
    )
    .unwrap();
    println!("{}", report.table.render_text());
    for run in &report.runs {
        assert_eq!(run.failures().count(), 0);
    }
    let at5 = |mode: Mode| {
        report
            .table
            .rows
            .iter()
            .find(|r| r.mode == mode)
            .unwrap()
            .at(5)
            .unwrap()
            .ratio
    };
    assert!(at5(Mode::SemanticOnly) < at5(Mode::LlmDatasheet));
    assert!(at5(Mode::Llm) <= at5(Mode::LlmDatasheet));
}
