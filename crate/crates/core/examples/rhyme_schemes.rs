//! Rhyme detection on the bundled dictionary: rhyme parts, scheme labels and
//! target matching.

use grnp::corpus::synth;
use grnp::rhyme::SchemeLabel;

fn main() -> grnp::Result<()> {
    let rhymer = synth::desk_rhymer();
    println!("dictionary: {} words", rhymer.dict().len());
    for w in ["chill", "ill", "play", "way", "away", "snow"] {
        println!("  {w:<6} rhyme part {:?}", rhymer.rhyme_part(w));
    }
    for ends in [["chill", "ill", "play", "way"], ["snow", "away", "decay", "today"], ["night", "light", "day", "moon"]] {
        println!("{ends:?} -> {}", rhymer.label_scheme(&ends)?);
    }
    let target = SchemeLabel::parse("AABB")?;
    let ends = ["chill", "ill", "play", "way"];
    println!("{ends:?} matches {target}: {}", rhymer.matches_scheme(&ends, &target)?);
    Ok(())
}
