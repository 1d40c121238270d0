//! Synthetic nested-entity language used as a training workload.
//!
//! Sentences mix filler runs (`a` to `t`) with segments built from up to three
//! adjacent runs: a city run (`A` to `F`), a district run (`G` to `L`) and an
//! office run (`M` to `R`), each one to three characters long. Gold mentions
//! are a function of the text alone:
//!
//! | runs present            | mentions                                          |
//! |-------------------------|---------------------------------------------------|
//! | city                    | city: Location                                    |
//! | district                | district: Location                                |
//! | city district           | both runs and their union: Location               |
//! | district office         | district: Location, district+office: Organization |
//! | city office             | city: Location, city+office: Organization         |
//! | city district office    | all of the above, whole segment: Organization     |
//! | office                  | none                                              |
//!
//! The full three-run segment reproduces the five-mention, depth-three
//! nesting of a government name.

use rand::Rng;

use crate::corpus::{Corpus, Mention, Sentence};
use crate::tagger::{stream_rng, Stream};

pub const LOCATION: &str = "Location";
pub const ORGANIZATION: &str = "Organization";

const FILLER: std::ops::RangeInclusive<char> = 'a'..='t';
const CITY: std::ops::RangeInclusive<char> = 'A'..='F';
const DISTRICT: std::ops::RangeInclusive<char> = 'G'..='L';
const OFFICE: std::ops::RangeInclusive<char> = 'M'..='R';

fn run<R: Rng>(rng: &mut R, alphabet: std::ops::RangeInclusive<char>, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| rng.gen_range(alphabet.clone())).collect()
}

/// Appends one entity segment at token offset `at`; returns its mentions.
fn segment<R: Rng>(rng: &mut R, text: &mut String, at: usize) -> Vec<Mention> {
    // city, district, office presence; office-only segments carry no entity
    let shapes = [
        (true, false, false),
        (false, true, false),
        (true, true, false),
        (false, true, true),
        (true, false, true),
        (true, true, true),
        (true, true, true),
        (false, false, true),
    ];
    let (c, d, o) = shapes[rng.gen_range(0..shapes.len())];
    let mut pos = at;
    let mut span = |present: bool, alphabet, text: &mut String| {
        present.then(|| {
            let r = run(rng, alphabet, 1, 3);
            let s = (pos, pos + r.chars().count());
            text.push_str(&r);
            pos = s.1;
            s
        })
    };
    let city = span(c, CITY, text);
    let district = span(d, DISTRICT, text);
    let office = span(o, OFFICE, text);

    let mut out = Vec::new();
    let loc = |(a, b): (usize, usize)| Mention::new(a, b, LOCATION);
    let org = |a: usize, b: usize| Mention::new(a, b, ORGANIZATION);
    if let Some(s) = city {
        out.push(loc(s));
    }
    if let Some(s) = district {
        out.push(loc(s));
    }
    if let (Some(cs), Some(ds)) = (city, district) {
        out.push(loc((cs.0, ds.1)));
    }
    if let Some(os) = office {
        if let Some(ds) = district {
            out.push(org(ds.0, os.1));
        }
        if let Some(cs) = city {
            out.push(org(cs.0, os.1));
        }
    }
    out
}

/// One sentence: filler, then one to three segments separated by filler.
pub fn toy_sentence<R: Rng>(rng: &mut R) -> Sentence {
    let mut text = run(rng, FILLER, 0, 3);
    let mut mentions = Vec::new();
    let segments = rng.gen_range(1..=3);
    for k in 0..segments {
        if k > 0 {
            text.push_str(&run(rng, FILLER, 1, 4));
        }
        let at = text.chars().count();
        mentions.extend(segment(rng, &mut text, at));
    }
    text.push_str(&run(rng, FILLER, 0, 3));
    Sentence::new(&text, mentions).expect("generator emits valid sentences")
}

/// `size` sentences, deterministic in `seed`.
pub fn generate(size: usize, seed: u64) -> Corpus {
    let mut rng = stream_rng(seed, Stream::Toy);
    let sentences = (0..size).map(|_| toy_sentence(&mut rng)).collect();
    Corpus::with_categories(sentences, vec![LOCATION.into(), ORGANIZATION.into()])
        .expect("generator categories are fixed")
}
