use crate::model::{BidId, Side};

/// Remaining quantities below this are treated as exhausted.
pub const QTY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BookEntry {
    pub bid: BidId,
    pub price: f64,
    pub arrival: u64,
    pub node: usize,
    pub remaining: f64,
}

/// Resting requests and offers of one (direction, period) pair.
///
/// Requests are kept by descending price, offers by ascending price, both with
/// older arrivals first at equal price.
#[derive(Debug, Clone, Default)]
pub struct OrderBook {
    requests: Vec<BookEntry>,
    offers: Vec<BookEntry>,
}

fn ranks_before(side: Side, a: &BookEntry, b: &BookEntry) -> bool {
    let better_price = match side {
        Side::Request => a.price > b.price,
        Side::Offer => a.price < b.price,
    };
    better_price || (a.price == b.price && a.arrival < b.arrival)
}

impl OrderBook {
    pub fn side(&self, side: Side) -> &[BookEntry] {
        match side {
            Side::Request => &self.requests,
            Side::Offer => &self.offers,
        }
    }

    pub(crate) fn side_mut(&mut self, side: Side) -> &mut Vec<BookEntry> {
        match side {
            Side::Request => &mut self.requests,
            Side::Offer => &mut self.offers,
        }
    }

    pub fn insert(&mut self, side: Side, entry: BookEntry) {
        debug_assert!(entry.remaining > QTY_EPS);
        let list = self.side_mut(side);
        let pos = list.partition_point(|e| ranks_before(side, e, &entry));
        list.insert(pos, entry);
    }

    pub fn find(&self, side: Side, bid: BidId) -> Option<&BookEntry> {
        self.side(side).iter().find(|e| e.bid == bid)
    }

    /// Reduces an entry's remaining quantity, dropping it once exhausted.
    pub fn consume(&mut self, side: Side, bid: BidId, quantity: f64) -> f64 {
        let list = self.side_mut(side);
        let Some(pos) = list.iter().position(|e| e.bid == bid) else {
            return 0.0;
        };
        list[pos].remaining -= quantity;
        let left = list[pos].remaining;
        if left <= QTY_EPS {
            list.remove(pos);
            0.0
        } else {
            left
        }
    }

    pub fn is_sorted(&self) -> bool {
        let ok = |side: Side, list: &[BookEntry]| list.windows(2).all(|w| !ranks_before(side, &w[1], &w[0]));
        ok(Side::Request, &self.requests) && ok(Side::Offer, &self.offers)
    }

    pub fn len(&self) -> usize {
        self.requests.len() + self.offers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
