//! Small hand-written examples used in tests and demos.

use super::example::{Hyperlink, Paragraph, QAExample, QuestionType, Sentence, SupportingFact};
use super::text::tokenize;

/// The Skiffle / Die Rhöner Säuwäntzt bridge question, with two short
/// distractor paragraphs. The gold documents are deliberately not first in
/// the context.
pub fn skiffle() -> QAExample {
    let question = "Where did the form of music played by Die Rhöner Säuwäntzt originate?";
    let paragraphs = vec![
        Paragraph {
            title: "Skiffle".into(),
            sentences: vec![
                Sentence::new(
                    "Skiffle is a music genre with jazz, blues, folk and American folk influences.",
                ),
                Sentence::new(
                    "Originating as a term in the United States in the first half of the 20th century.",
                ),
            ],
            hyperlinks: vec![],
        },
        Paragraph {
            title: "Jug band".into(),
            sentences: vec![Sentence::new(
                "A jug band is a band employing a jug player and a mix of home-made instruments.",
            )],
            hyperlinks: vec![],
        },
        Paragraph {
            title: "Die Rhöner Säuwäntzt".into(),
            sentences: vec![Sentence::new(
                "Die Rhöner Säuwäntzt are a Skiffle-Bluesband from Eichenzell-Lütter in Hessen, Germany.",
            )],
            hyperlinks: vec![Hyperlink {
                sentence: 0,
                target: "Skiffle".into(),
            }],
        },
        Paragraph {
            title: "Washboard".into(),
            sentences: vec![Sentence::new(
                "The washboard was played as a percussion instrument in early folk music.",
            )],
            hyperlinks: vec![],
        },
    ];
    QAExample {
        id: "skiffle".into(),
        question: question.into(),
        question_tokens: tokenize(question),
        paragraphs,
        answer: "United States".into(),
        supporting_facts: vec![
            SupportingFact("Die Rhöner Säuwäntzt".into(), 0),
            SupportingFact("Skiffle".into(), 0),
            SupportingFact("Skiffle".into(), 1),
        ],
        qtype: QuestionType::Bridge,
    }
}
