#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mbc/sim.hpp"
#include "mbc/synth.hpp"
#include "mbc/util.hpp"

using namespace mbc;

namespace {

SimOptions sim_options(Scheme scheme, bool hybrid, double threshold, bool growing,
                       WindowShipping shipping = WindowShipping::NewKernelOnly) {
  SimOptions opt;
  opt.build.scheme = scheme;
  opt.build.hybrid = hybrid;
  opt.build.pte_threshold_m = threshold;
  opt.build.reuse_eval = ReuseEval::FixedOneSecond;
  opt.build.seed = 42;
  opt.growing = growing;
  opt.shipping = shipping;
  return opt;
}

KernelBank empty_bank(Scheme scheme, bool hybrid, double threshold) {
  KernelBank bank;
  bank.scheme = scheme;
  bank.hybrid = hybrid;
  bank.pte_threshold_m = threshold;
  return bank;
}

Trajectory straight_trip(double v, double heading, double duration_s) {
  Trajectory tr;
  tr.trip_id = "straight";
  const int n = static_cast<int>(duration_s * 10.0) + 1;
  for (int i = 0; i < n; ++i) {
    const double t = i / 10.0;
    tr.t.push_back(t);
    tr.x_enu.push_back(v * std::cos(heading) * t);
    tr.y_enu.push_back(v * std::sin(heading) * t);
    tr.speed.push_back(v);
    tr.heading_unwrapped.push_back(heading);
  }
  return tr;
}

}  // namespace

TEST_CASE("constant-velocity trip with a frozen hybrid bank sends exactly one packet") {
  const auto tr = straight_trip(12.0, 0.35, 25.0);
  auto bank = empty_bank(Scheme::Indirect, true, 0.5);
  const auto opt = sim_options(Scheme::Indirect, true, 0.5, /*growing=*/false);
  auto res = simulate_link(tr, bank, opt);
  REQUIRE(res.packets.packets.size() == 1);
  CHECK(res.packets.packets[0].kind == PacketKind::CvTag);
  CHECK(res.packets.packets[0].reason == PacketReason::Initial);
  CHECK(res.packets.packets[0].trigger_pte_m == 0.0);
  CHECK(res.metrics.max_receiver_pte_m < 1e-9);
  // the single model's realized persistency spans the whole tracked trip
  REQUIRE(res.selections.size() == 1);
  CHECK(res.selections[0].persistency_s ==
        doctest::Approx(res.metrics.span_s).epsilon(1e-12));
}

TEST_CASE("growing-mode packet count equals build_bank's update events exactly") {
  const auto corpus = generate_corpus(3, CorpusPreset::Default, 29);
  const auto opt = sim_options(Scheme::Indirect, true, 0.5, /*growing=*/true,
                               WindowShipping::Always);

  auto [ref_bank, ref_metrics] = build_bank(corpus, opt.build);

  auto bank = empty_bank(Scheme::Indirect, true, 0.5);
  auto run = simulate_corpus(corpus, bank, opt);

  int packets = 0;
  for (const auto& trip : run.trips) packets += trip.metrics.packets;
  CHECK(packets == static_cast<int>(ref_metrics.events.size()));
  CHECK(bank.size() == ref_bank.size());

  // per-event agreement: same sources in the same order
  std::size_t i = 0;
  for (const auto& trip : run.trips) {
    for (const auto& sel : trip.selections) {
      REQUIRE(i < ref_metrics.events.size());
      CHECK(sel.source == ref_metrics.events[i].kind);
      CHECK(sel.entry_id == ref_metrics.events[i].entry_id);
      CHECK(sel.persistency_s ==
            doctest::Approx(ref_metrics.events[i].persistency_s).epsilon(1e-12));
      ++i;
    }
  }
  CHECK(i == ref_metrics.events.size());
}

TEST_CASE("receiver reconstruction from the packet log alone is bit-exact") {
  const auto corpus = generate_corpus(2, CorpusPreset::Default, 37);
  for (auto shipping : {WindowShipping::NewKernelOnly, WindowShipping::Always}) {
    auto bank = empty_bank(Scheme::Indirect, true, 0.4);
    const auto opt = sim_options(Scheme::Indirect, true, 0.4, /*growing=*/true, shipping);
    for (const auto& tr : corpus) {
      auto res = simulate_link(tr, bank, opt);
      // JSON round trip, then replay with only packet content + sample clock
      namespace fs = std::filesystem;
      const fs::path dir = fs::temp_directory_path() / "mbc_sim_replay";
      fs::create_directories(dir);
      const std::vector<TripPackets> tp{res.packets};
      save_packets_json(tp, dir / "packets.json");
      const auto loaded = load_packets_json(dir / "packets.json");
      REQUIRE(loaded.size() == 1);
      // pre-distribute the entries known before this trip started (growing
      // replay learns the rest from NewKernel packets)
      std::map<int, ChannelSpecs> dist;
      for (const auto& e : bank.entries) dist[e.id] = e.specs;
      const auto trace =
          replay_receiver(loaded[0], tr, opt.build.scheme, opt.build.tw, dist);
      REQUIRE(trace.size() == res.trace.size());
      for (std::size_t i = 0; i < trace.size(); ++i) {
        CHECK(trace[i].x_est == res.trace[i].x_est);
        CHECK(trace[i].y_est == res.trace[i].y_est);
        CHECK(trace[i].pte_m == res.trace[i].pte_m);
      }
      fs::remove_all(dir);
    }
  }
}

TEST_CASE("packet triggers exceed the threshold except on initial/refresh packets") {
  const auto corpus = generate_corpus(2, CorpusPreset::Default, 41);
  auto bank = empty_bank(Scheme::Indirect, false, 0.3);
  const auto opt = sim_options(Scheme::Indirect, false, 0.3, /*growing=*/true);
  for (const auto& tr : corpus) {
    const auto res = simulate_link(tr, bank, opt);
    for (const auto& p : res.packets.packets) {
      if (p.reason == PacketReason::Violation) {
        CHECK(p.trigger_pte_m > 0.3);
      } else {
        CHECK(p.trigger_pte_m <= 0.3 + 1e-12);
      }
    }
  }
}

TEST_CASE("inter-packet spacing identity and receiver drift bound") {
  const auto corpus = generate_corpus(2, CorpusPreset::Default, 43);
  auto bank = empty_bank(Scheme::Indirect, true, 0.5);
  const auto opt = sim_options(Scheme::Indirect, true, 0.5, /*growing=*/true);
  for (const auto& tr : corpus) {
    const auto res = simulate_link(tr, bank, opt);
    double psum = 0.0;
    for (const auto& s : res.selections) psum += s.persistency_s;
    CHECK(res.metrics.mean_inter_packet_s ==
          doctest::Approx(psum / res.selections.size()).epsilon(1e-9));

    // receiver error exceeds the threshold by at most one step's drift
    double max_step_jump = 0.0;
    for (std::size_t i = 1; i < res.trace.size(); ++i) {
      max_step_jump =
          std::max(max_step_jump, res.trace[i].pte_m - res.trace[i - 1].pte_m);
    }
    CHECK(res.metrics.max_receiver_pte_m <= 0.5 + max_step_jump + 1e-9);
    // kinematic bound on the same quantity: both true and predicted motion
    // advance by at most ~max speed per 0.1 s step
    double vmax = 0.0;
    for (double v : tr.speed) vmax = std::max(vmax, v);
    CHECK(res.metrics.max_receiver_pte_m <= 0.5 + 2.0 * vmax * 0.1);
  }
}

TEST_CASE("packets per second never increase with the threshold") {
  const auto corpus = generate_corpus(3, CorpusPreset::Default, 47);
  for (const auto& tr : corpus) {
    double prev_rate = 1e9;
    for (double th : {0.2, 0.3, 0.4, 0.5}) {
      auto bank = empty_bank(Scheme::Indirect, true, th);
      const auto opt = sim_options(Scheme::Indirect, true, th, /*growing=*/true);
      const auto res = simulate_link(tr, bank, opt);
      CHECK(res.metrics.packets_per_s <= prev_rate + 1e-12);
      prev_rate = res.metrics.packets_per_s;
    }
  }
}

TEST_CASE("hybrid never sends more packets than solo on the same trip") {
  const auto corpus = generate_corpus(3, CorpusPreset::Default, 53);
  for (const auto& tr : corpus) {
    auto bank_s = empty_bank(Scheme::Indirect, false, 0.5);
    auto bank_h = empty_bank(Scheme::Indirect, true, 0.5);
    const auto solo =
        simulate_link(tr, bank_s, sim_options(Scheme::Indirect, false, 0.5, true));
    const auto hyb =
        simulate_link(tr, bank_h, sim_options(Scheme::Indirect, true, 0.5, true));
    CHECK(hyb.metrics.packets <= solo.metrics.packets);
  }
}

TEST_CASE("frozen comprehensive bank: small id packets, growing pays for specs") {
  // train a direct bank on the corpus, then compare frozen vs growing on
  // held-out trips: similar packet rates, >= 5x payload difference
  const auto train = generate_corpus(12, CorpusPreset::Default, 61);
  const auto opt_build = sim_options(Scheme::Direct, false, 0.5, true);
  auto [trained, metrics] = build_bank(train, opt_build.build);
  REQUIRE(trained.size() > 20);

  const auto held_out = generate_corpus(3, CorpusPreset::Default, 67);

  auto frozen = trained;
  const auto frozen_opt = sim_options(Scheme::Direct, false, 0.5, /*growing=*/false);
  auto frozen_run = simulate_corpus(held_out, frozen, frozen_opt);

  auto growing = empty_bank(Scheme::Direct, false, 0.5);
  const auto growing_opt = sim_options(Scheme::Direct, false, 0.5, /*growing=*/true);
  auto growing_run = simulate_corpus(held_out, growing, growing_opt);

  const double fr = frozen_run.overall.packets_per_s;
  const double gr = growing_run.overall.packets_per_s;
  CHECK(std::abs(fr - gr) <= 0.1 * std::max(fr, gr));
  CHECK(growing_run.overall.payload_bytes_total >=
        5 * frozen_run.overall.payload_bytes_total);
  CHECK(frozen.size() == trained.size());  // frozen banks do not grow
}

TEST_CASE("packet payload accounting") {
  PacketPayload id_pkt;
  id_pkt.kind = PacketKind::KernelId;
  CHECK(id_pkt.payload_bytes(10) == 24);
  id_pkt.win_t.resize(10);
  CHECK(id_pkt.payload_bytes(10) == 24 + 80);

  PacketPayload cv;
  cv.kind = PacketKind::CvTag;
  CHECK(cv.payload_bytes(10) == 24);

  PacketPayload nk;
  nk.kind = PacketKind::NewKernel;
  nk.win_t.resize(10);
  CHECK(nk.payload_bytes(10) == 80 + 20 + 80);
}

TEST_CASE("sweep produces the full grid plus tw and shuffle studies") {
  const auto corpus = generate_corpus(4, CorpusPreset::ThreeRegime, 71);
  SweepConfig sc;
  sc.schemes = {{Scheme::Direct, true}, {Scheme::Direct, false},
                {Scheme::Indirect, true}, {Scheme::Indirect, false}};
  sc.thresholds = {0.2, 0.3, 0.4, 0.5};
  sc.tws = {5, 10, 20};
  sc.shuffle_seeds = {1, 2};
  sc.base.reuse_eval = ReuseEval::FixedOneSecond;
  sc.base.seed = 42;
  const auto cells = sweep(corpus, sc);

  int grid = 0, tw = 0, shuffle = 0;
  for (const auto& c : cells) {
    if (c.study == "grid") ++grid;
    if (c.study == "tw") ++tw;
    if (c.study == "shuffle") ++shuffle;
    CHECK(c.updates > 0);
    CHECK(c.mean_mp_s > 0.0);
  }
  CHECK(grid == 16);     // Table I/II shape: 4 schemes x 4 thresholds
  CHECK(tw == 2);        // tw=10 already covered by the grid
  CHECK(shuffle == 4);   // 2 seeds x {hybrid, solo}

  // shuffling only reorders trips; the corpus content is unchanged
  const auto shuffled = shuffled_corpus(corpus, 99);
  REQUIRE(shuffled.size() == corpus.size());
  int matched = 0;
  for (const auto& tr : shuffled) {
    for (const auto& orig : corpus) {
      if (tr.trip_id == orig.trip_id && tr.size() == orig.size()) ++matched;
    }
  }
  CHECK(matched == static_cast<int>(corpus.size()));
}

TEST_CASE("packet log CSV has the documented schema") {
  const auto tr = straight_trip(10.0, 0.0, 20.0);
  auto bank = empty_bank(Scheme::Indirect, true, 0.5);
  const auto res = simulate_link(tr, bank, sim_options(Scheme::Indirect, true, 0.5, false));
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mbc_sim_csv";
  fs::create_directories(dir);
  save_packet_log_csv(res.packets, dir / "log.csv");
  const auto text = read_text_file(dir / "log.csv");
  CHECK(text.rfind("t,kind,kernel_id,trigger_pte_m,x0,y0,v0,theta0\n", 0) == 0);
  fs::remove_all(dir);
}
