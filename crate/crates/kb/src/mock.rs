//! Deterministic offline knowledge base.
//!
//! Captions are drawn from a finite phrase table per class label; which
//! phrase a given image gets is a pure function of the backend seed and the
//! record's identity, so repeated runs are bit-identical. Reconstruction
//! inverts captioning by keyword lookup: the first word of the caption that
//! names a known class decides the label, and a caption with no such word
//! maps to `"unknown"` rather than failing.
//!
//! The three built-in datasets use deliberately disjoint vocabularies — no
//! word of any `toy-cifar` phrase appears in any `toy-birds` or `toy-pets`
//! phrase and vice versa — so sequential training across them exhibits real
//! distribution shift. Within a dataset, phrases share function words.

use crate::{
    fnv1a, normalize_words, CaptionRecord, CaptionSource, ImageRecord, KnowledgeBase, Provenance,
    Result,
};

/// One class and its caption phrases. Every phrase contains the class noun
/// exactly once and no other class's noun.
#[derive(Debug)]
pub(crate) struct LabelPhrases {
    pub label: &'static str,
    pub phrases: &'static [&'static str],
}

/// One built-in dataset: a name and its class phrase tables.
#[derive(Debug)]
pub(crate) struct DatasetTable {
    pub name: &'static str,
    pub classes: &'static [LabelPhrases],
}

/// Names of the built-in fixture datasets, in experiment order.
pub const FIXTURE_DATASET_NAMES: [&str; 3] = ["toy-cifar", "toy-birds", "toy-pets"];

pub(crate) const DATASETS: &[DatasetTable] = &[
    DatasetTable {
        name: "toy-cifar",
        classes: &[
            LabelPhrases {
                label: "airplane",
                phrases: &[
                    "the silver airplane climbs over distant clouds",
                    "the small airplane glides above foggy hills",
                    "the airplane banks into bright open sky",
                ],
            },
            LabelPhrases {
                label: "ship",
                phrases: &[
                    "the cargo ship drifts over calm waves",
                    "the tall ship sails beneath grey clouds",
                    "the ship steams into quiet harbour water",
                ],
            },
            LabelPhrases {
                label: "truck",
                phrases: &[
                    "the red truck rumbles over gravel roads",
                    "the heavy truck hauls timber into town",
                    "the delivery truck idles beneath concrete bridges",
                ],
            },
        ],
    },
    DatasetTable {
        name: "toy-birds",
        classes: &[
            LabelPhrases {
                label: "sparrow",
                phrases: &[
                    "one brown sparrow perches upon thin reeds",
                    "one sparrow hops beside fallen seeds",
                    "one tiny sparrow flutters within hedge rows",
                ],
            },
            LabelPhrases {
                label: "eagle",
                phrases: &[
                    "one bald eagle soars under pale sunlight",
                    "one eagle circles upon rising winds",
                    "one fierce eagle dives beside rocky cliffs",
                ],
            },
            LabelPhrases {
                label: "owl",
                phrases: &[
                    "one snowy owl blinks within dark hollows",
                    "one owl swoops under moonlit branches",
                    "one spotted owl waits beside mossy trunks",
                ],
            },
        ],
    },
    DatasetTable {
        name: "toy-pets",
        classes: &[
            LabelPhrases {
                label: "dog",
                phrases: &[
                    "a dog sitting on grass",
                    "a dog running across sandy yards",
                    "a playful dog resting near its kennel",
                ],
            },
            LabelPhrases {
                label: "cat",
                phrases: &[
                    "a cat sleeping on warm cushions",
                    "a striped cat chasing yarn balls",
                    "a cat grooming its soft fur",
                ],
            },
            LabelPhrases {
                label: "rabbit",
                phrases: &[
                    "a rabbit hopping through green clover",
                    "a white rabbit nibbling fresh lettuce",
                    "a rabbit digging burrows near old fences",
                ],
            },
        ],
    },
];

/// Stand-alone demo labels outside any dataset (free to share words with
/// the datasets, since they never participate in distribution-shift runs).
const SPECIAL: &[LabelPhrases] = &[LabelPhrases {
    label: "fire-beach",
    phrases: &["a fire is burning on a beach near the water"],
}];

/// Caption used for labels absent from every table. Contains no class
/// keyword, so a round trip through the mock lands on `"unknown"`.
const FALLBACK_CAPTION: &str = "an unrecognized subject in an empty scene";

/// Keyword → label map driving [`keyword_label`]. Each class noun names its
/// own label; the demo label answers to either of its two scene words.
const TRIGGERS: &[(&str, &str)] = &[
    ("airplane", "airplane"),
    ("ship", "ship"),
    ("truck", "truck"),
    ("sparrow", "sparrow"),
    ("eagle", "eagle"),
    ("owl", "owl"),
    ("dog", "dog"),
    ("cat", "cat"),
    ("rabbit", "rabbit"),
    ("fire", "fire-beach"),
    ("beach", "fire-beach"),
];

/// Labels of a built-in dataset, in table order.
pub fn fixture_labels(dataset: &str) -> Option<Vec<&'static str>> {
    DATASETS
        .iter()
        .find(|d| d.name == dataset)
        .map(|d| d.classes.iter().map(|c| c.label).collect())
}

/// Phrase table of one label, searching datasets then demo labels.
pub fn phrases_for(label: &str) -> Option<&'static [&'static str]> {
    DATASETS
        .iter()
        .flat_map(|d| d.classes.iter())
        .chain(SPECIAL.iter())
        .find(|c| c.label == label)
        .map(|c| c.phrases)
}

/// Every caption phrase of one built-in dataset.
pub fn dataset_phrases(dataset: &str) -> Option<Vec<&'static str>> {
    DATASETS
        .iter()
        .find(|d| d.name == dataset)
        .map(|d| d.classes.iter().flat_map(|c| c.phrases.iter().copied()).collect())
}

/// Every caption the mock backend can ever emit, across all datasets, demo
/// labels, and the fallback. Useful for building a closed vocabulary.
pub fn all_phrases() -> Vec<&'static str> {
    DATASETS
        .iter()
        .flat_map(|d| d.classes.iter())
        .chain(SPECIAL.iter())
        .flat_map(|c| c.phrases.iter().copied())
        .chain(std::iter::once(FALLBACK_CAPTION))
        .collect()
}

/// Recover a class label from caption text: the first normalized word that
/// matches a known class keyword decides. `None` when no keyword appears.
pub fn keyword_label(text: &str) -> Option<&'static str> {
    normalize_words(text).into_iter().find_map(|w| {
        TRIGGERS
            .iter()
            .find(|(kw, _)| *kw == w.as_str())
            .map(|(_, label)| *label)
    })
}

/// The demo image whose caption is the fixed beach-fire sentence.
pub fn fire_beach_fixture() -> ImageRecord {
    ImageRecord {
        id: "demo/fire-beach/000".to_string(),
        label: "fire-beach".to_string(),
        payload: 0u64.to_le_bytes().to_vec(),
        provenance: Provenance::Fixture,
    }
}

/// Deterministic offline captioner/reconstructor.
#[derive(Debug, Clone, Copy)]
pub struct MockKb {
    seed: u64,
}

impl MockKb {
    /// Backend with an explicit phrase-selection seed.
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// The backend seed.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn pick_phrase(&self, img: &ImageRecord, phrases: &'static [&'static str]) -> &'static str {
        let h = fnv1a(&[
            &self.seed.to_le_bytes(),
            img.label.as_bytes(),
            img.id.as_bytes(),
            &img.payload,
        ]);
        phrases[(h % phrases.len() as u64) as usize]
    }
}

impl Default for MockKb {
    fn default() -> Self {
        Self::new(0)
    }
}

impl KnowledgeBase for MockKb {
    fn caption(&self, img: &ImageRecord) -> Result<CaptionRecord> {
        let text = match phrases_for(&img.label) {
            Some(phrases) => self.pick_phrase(img, phrases),
            None => FALLBACK_CAPTION,
        };
        Ok(CaptionRecord {
            image_id: img.id.clone(),
            text: text.to_string(),
            source: CaptionSource::Mock,
        })
    }

    fn reconstruct(&self, caption: &CaptionRecord) -> Result<ImageRecord> {
        let label = keyword_label(&caption.text).unwrap_or("unknown");
        Ok(ImageRecord {
            id: format!("recon-{}", caption.image_id),
            label: label.to_string(),
            payload: format!("synthetic:{label}").into_bytes(),
            provenance: Provenance::Fixture,
        })
    }
}
