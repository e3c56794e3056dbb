//! Direct in-process wiring of users, servers and clearance centers.

use std::collections::BTreeMap;

use crate::agents::Transport;
use crate::clearance::ClearanceCenter;
use crate::server::{ClearanceLink, ResourceServer};
use crate::token::NodeId;

/// A server's link straight into a clearance center.
pub struct DirectLink<'a> {
    pub center: &'a ClearanceCenter,
    pub now: u64,
}

impl ClearanceLink for DirectLink<'_> {
    fn clear(&self, request: Vec<u8>) -> Option<Vec<u8>> {
        Some(self.center.receive(&request, self.now))
    }

    fn commit(&self, commit: Vec<u8>) -> Option<Vec<u8>> {
        Some(self.center.receive(&commit, self.now))
    }
}

/// Routes requests to servers, and servers to their clearance centers,
/// with no recording and no adversary.
#[derive(Default)]
pub struct LocalNetwork<'a> {
    servers: BTreeMap<NodeId, &'a ResourceServer>,
    centers: BTreeMap<NodeId, &'a ClearanceCenter>,
    now: u64,
}

impl<'a> LocalNetwork<'a> {
    pub fn new(now: u64) -> Self {
        Self {
            servers: BTreeMap::new(),
            centers: BTreeMap::new(),
            now,
        }
    }

    pub fn server(mut self, s: &'a ResourceServer) -> Self {
        self.servers.insert(s.id().clone(), s);
        self
    }

    pub fn center(mut self, c: &'a ClearanceCenter) -> Self {
        self.centers.insert(c.id().clone(), c);
        self
    }

    pub fn set_now(&mut self, now: u64) {
        self.now = now;
    }
}

impl Transport for LocalNetwork<'_> {
    fn exchange(
        &self,
        server: &NodeId,
        request: Vec<u8>,
        on_confirm: &mut dyn FnMut(Vec<u8>) -> Option<Vec<u8>>,
    ) -> Option<Vec<u8>> {
        let s = self.servers.get(server)?;
        let center = self.centers.get(&s.clearance().id)?;
        let link = DirectLink { center, now: self.now };
        s.receive(&request, self.now, &link, on_confirm).reply
    }
}
