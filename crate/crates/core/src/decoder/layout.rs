use crate::config::QueryMode;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    FastVisual,
    Text,
}

/// Per-position segment labels of the LLM input sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    segments: Vec<Segment>,
}

impl SequenceLayout {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    /// `fast` visual positions followed by `text` positions.
    pub fn visual_then_text(fast: usize, text: usize) -> Self {
        let mut segments = vec![Segment::FastVisual; fast];
        segments.extend(std::iter::repeat_n(Segment::Text, text));
        Self { segments }
    }

    pub fn total_len(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn positions_of(&self, seg: Segment) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == seg)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows that issue cross-attention queries under `mode`.
    pub fn query_rows(&self, mode: QueryMode) -> Vec<usize> {
        match mode {
            QueryMode::All => (0..self.total_len()).collect(),
            QueryMode::TextOnly => self.positions_of(Segment::Text),
            QueryMode::VisualOnly => self.positions_of(Segment::FastVisual),
        }
    }
}

/// Hidden states together with the layout that labels their rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub x: Tensor,
    pub layout: SequenceLayout,
}

impl HiddenState {
    pub fn new(x: Tensor, layout: SequenceLayout) -> Result<Self> {
        let (t, _) = x.expect_rank2("hidden state")?;
        if t != layout.total_len() {
            return Err(Error::InvalidShape(format!(
                "hidden state has {t} rows but layout labels {}",
                layout.total_len()
            )));
        }
        Ok(Self { x, layout })
    }

    pub fn len(&self) -> usize {
        self.layout.total_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_x(&self, x: Tensor) -> Self {
        Self {
            x,
            layout: self.layout.clone(),
        }
    }
}

/// `[fast; text]` with matching labels. Empty `fast` is allowed; empty `text` is not.
pub fn build_sequence(fast: &Tensor, text: &Tensor) -> Result<HiddenState> {
    let (kf, df) = fast.expect_rank2("build_sequence fast")?;
    let (n, dt) = text.expect_rank2("build_sequence text")?;
    if n == 0 {
        return Err(Error::Usage("a sequence needs at least one text position".into()));
    }
    if kf > 0 && df != dt {
        return Err(Error::shape("build_sequence", fast.shape(), text.shape()));
    }
    let x = if kf == 0 {
        text.clone()
    } else {
        Tensor::concat_rows(fast, text)?
    };
    HiddenState::new(x, SequenceLayout::visual_then_text(kf, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sized_sequence() {
        let h = build_sequence(&Tensor::zeros(&[1296, 4]), &Tensor::zeros(&[32, 4])).unwrap();
        assert_eq!(h.len(), 1328);
        assert_eq!(h.layout.positions_of(Segment::FastVisual), (0..1296).collect::<Vec<_>>());
        assert_eq!(h.layout.query_rows(QueryMode::TextOnly).len(), 32);
    }

    #[test]
    fn empty_fast_prefix_allowed() {
        let h = build_sequence(&Tensor::zeros(&[0, 4]), &Tensor::full(&[3, 4], 1.0)).unwrap();
        assert_eq!(h.layout.query_rows(QueryMode::VisualOnly), Vec::<usize>::new());
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(build_sequence(&Tensor::zeros(&[2, 4]), &Tensor::zeros(&[0, 4])).is_err());
    }

    #[test]
    fn width_mismatch_rejected() {
        assert!(matches!(
            build_sequence(&Tensor::zeros(&[2, 4]), &Tensor::zeros(&[1, 5])),
            Err(Error::Shape { .. })
        ));
    }
}
