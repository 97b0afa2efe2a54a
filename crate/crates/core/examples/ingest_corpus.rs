//! Corpus ingestion: parse blank-line separated records, split them into
//! quatrains, label rhyme schemes, build the vocabulary and write a dataset
//! directory. With a path argument the bundle is saved there.

use grnp::corpus::{ingest, parse_corpus_str, serialize_corpus, synth, DatasetBundle, IngestConfig, SplitSpec};

fn main() -> grnp::Result<()> {
    let text = "#author: ann\n\
                The evening air is growing chill,\n\
                I wander slowly up the hill.\n\
                The children laugh and run to play,\n\
                and all the birds have flown away.\n\
                \n\
                #author: bo\n\
                The night is dark, the moon is bright,\n\
                a lantern hangs beside the door.\n\
                We walk along the river road,\n\
                and never speak of it again.\n\
                \n\
                #author: ann\n\
                The stars are falling through the night,\n\
                the sea is calling from the shore.\n\
                I hold the candle burning bright\n\
                and wait for you forevermore.\n";
    let records = parse_corpus_str(text, "inline")?;
    println!("{} records; first serialized back:\n{}", records.len(), serialize_corpus(&records[..1]));

    let rhymer = synth::desk_rhymer();
    let cfg = IngestConfig::default();
    let small = ingest(&records, &rhymer, &IngestConfig { split: SplitSpec::Counts([3, 0, 0]), ..cfg.clone() })?;
    println!("inline corpus:\n{}", small.stats);

    let desk = synth::desk_corpus(&synth::DeskCorpusConfig::default())?;
    let ing = ingest(&desk, &rhymer, &cfg)?;
    println!("desk corpus:\n{}", ing.stats);
    let bundle = DatasetBundle::from_ingested(&ing)?;
    if let Some(dir) = std::env::args().nth(1) {
        bundle.save(&dir)?;
        println!("saved to {dir}");
    }
    Ok(())
}
