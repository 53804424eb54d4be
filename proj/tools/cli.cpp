#include "i2m/cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "i2m/common/error.hpp"
#include "i2m/delaunay/audit.hpp"
#include "i2m/delaunay/delaunay.hpp"
#include "i2m/podm/podm.hpp"

namespace i2m::cli {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Seq:
      return "seq";
    case Mode::Shared:
      return "shared";
    case Mode::Mw:
      return "mw";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "seq") return Mode::Seq;
  if (s == "shared") return Mode::Shared;
  if (s == "mw") return Mode::Mw;
  throw UsageError("unknown mode '" + s + "' (seq, shared, mw)");
}

void RunConfig::validate() const {
  if (phantom.empty() == image.empty()) throw UsageError("give exactly one of --phantom and --image");
  if (!(h > 0.0)) throw UsageError("--h must be positive");
  if (ranks != 0 && mode != Mode::Mw) throw UsageError("--ranks only applies to --mode mw");
  if (mode == Mode::Mw && ranks < 0) throw UsageError("--ranks must be at least 1");
  if (threads < 1) throw UsageError("--threads-per-rank must be at least 1");
  if (mode == Mode::Seq && threads != 1) throw UsageError("--mode seq runs one thread; use --mode shared");
  if (pack_threads < 0) throw UsageError("--pack-threads takes 1 or auto");
  if (depth < 0 || depth > Decomposition::kMaxDepth) {
    throw UsageError("--octree-depth must be in [0, " + std::to_string(Decomposition::kMaxDepth) + "]");
  }
  if (coarse_h < 0.0) throw UsageError("--coarse-h must be positive");
  if (time_limit < 0.0) throw UsageError("--time-limit must be non-negative");
  if (mode != Mode::Mw && (serve_while_meshing || transport != TransportKind::Inproc)) {
    throw UsageError("--transport and --serve-while-meshing only apply to --mode mw");
  }
  if (!grant_log.empty() && mode != Mode::Mw) throw UsageError("--grant-log only applies to --mode mw");
}

int RunConfig::resolved_pack_threads() const { return pack_threads == 0 ? hardware_threads() : pack_threads; }

double RunConfig::resolved_coarse_h(const Box& bounds) const {
  return coarse_h > 0.0 ? coarse_h : default_coarse_h(bounds, std::max(depth, 2));
}

nlohmann::json RunConfig::to_json() const {
  return {{"mode", mode_name(mode)},
          {"phantom", phantom},
          {"image", image},
          {"h", h},
          {"rho", rho},
          {"octree_depth", depth},
          {"coarse_h", coarse_h},
          {"ranks", ranks},
          {"threads_per_rank", threads},
          {"pack_threads", pack_threads == 0 ? nlohmann::json("auto") : nlohmann::json(pack_threads)},
          {"transport", transport == TransportKind::Inproc ? "inproc" : "socket"},
          {"serve_while_meshing", serve_while_meshing},
          {"seed", seed},
          {"time_limit", time_limit}};
}

nlohmann::json Audits::to_json() const {
  return {{"delaunay", delaunay_run ? nlohmann::json(delaunay) : nlohmann::json("skipped")},
          {"adjacency", adjacency},
          {"bad_elements", bad},
          {"grant_log", grant},
          {"ok", ok()}};
}

LabeledImage load_image(const RunConfig& cfg) {
  if (!cfg.image.empty()) return load_raw_file(cfg.image);
  return make_phantom(parse_phantom_spec(cfg.phantom));
}

namespace {

RefinementRule rule_of(const RunConfig& cfg) {
  RefinementRule r;
  r.rho_bar = cfg.rho;
  r.sizing.h = cfg.h;
  return r;
}

}  // namespace

RunResult run(const RunConfig& cfg, const LabeledImage& img) {
  cfg.validate();
  const RefinementRule rule = rule_of(cfg);
  rule.validate(img);
  const Watchdog wd{cfg.time_limit, 0};
  const double hc = cfg.resolved_coarse_h(img.bounds());

  RunResult out;
  nlohmann::json extra = nlohmann::json::object();
  if (cfg.mode == Mode::Mw) {
    MwConfig mc;
    mc.workers = cfg.ranks > 0 ? cfg.ranks : 1;
    mc.threads_per_rank = cfg.threads;
    mc.pack_threads = cfg.resolved_pack_threads();
    mc.serve_while_meshing = cfg.serve_while_meshing;
    mc.transport = cfg.transport;
    mc.depth = cfg.depth;
    mc.coarse_h = hc;
    mc.rule = rule;
    mc.watchdog = wd;
    mc.time_limit_s = cfg.time_limit;
    MwResult r = run_mw(img, mc);
    out.mesh = std::move(r.mesh);
    out.breakdowns = std::move(r.breakdowns);
    out.grants = std::move(r.grants);
    out.stats = r.total();
    extra["mw"] = {{"workers", mc.workers},
                   {"leaves", r.leaves},
                   {"tasks", r.task_count},
                   {"stuck_marks", r.stuck_marks},
                   {"max_active", r.max_active},
                   {"bytes_moved", r.bytes_moved},
                   {"cleanup_insertions", r.cleanup.insertions},
                   {"background", to_json(r.background)},
                   {"worker_tasks", to_json(r.tasks)}};
  } else {
    BreakdownTimer timer(0);
    RefineStats bg, st;
    timer.enter(Category::Preprocess);
    out.mesh = bootstrap(img);
    bg = cfg.mode == Mode::Seq ? refine_background(out.mesh, img, hc, rule.rho_bar, {}, wd)
                               : refine_background_parallel(out.mesh, img, hc, rule.rho_bar, cfg.threads, {}, wd);
    timer.exit(Category::Preprocess);
    timer.enter(Category::Mesh);
    st = cfg.mode == Mode::Seq ? refine(out.mesh, img, rule, {}, wd)
                               : refine_parallel(out.mesh, img, rule, cfg.threads, {}, wd);
    timer.exit(Category::Mesh);
    out.breakdowns = {timer.finish()};
    out.stats = bg;
    out.stats += st;
    extra["background"] = to_json(bg);
  }

  out.audits.delaunay_run = cfg.delaunay_audit;
  if (cfg.delaunay_audit) out.audits.delaunay = audit_delaunay(out.mesh).size();
  out.audits.adjacency = audit_adjacency(out.mesh).size();
  out.audits.bad = scan_bad(out.mesh, BadnessOracle(img, rule)).size();
  if (cfg.mode == Mode::Mw) out.audits.grant = audit_grant_log(Decomposition(cfg.depth, img.bounds()), out.grants).size();
  out.quality = quality_report(out.mesh, &img);
  out.kept = out.quality.elements;

  ReportInput in;
  in.config = cfg.to_json();
  in.config["coarse_h_used"] = hc;
  in.ranks = out.breakdowns;
  in.quality = out.quality;
  in.stats = out.stats;
  in.image_checksum = img.checksum();
  in.elements = out.mesh.alive_count();
  in.grant_log = cfg.grant_log;
  in.audits = out.audits.to_json();
  extra["kept_elements"] = out.kept;
  in.extra = extra;
  out.report = emit_report(in);
  return out;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  return f;
}

}  // namespace

void write_outputs(const RunConfig& cfg, const RunResult& r) {
  if (!cfg.report.empty()) open_out(cfg.report) << r.report.dump(2) << '\n';
  if (!cfg.csv.empty()) open_out(cfg.csv) << report_csv(r.report);
  if (!cfg.dump.empty()) write_mesh_dump(r.mesh, cfg.dump);
  if (!cfg.grant_log.empty()) {
    auto f = open_out(cfg.grant_log);
    write_grant_log(f, r.grants);
  }
}

std::vector<SweepCell> parse_grid(const std::string& spec) {
  std::vector<SweepCell> cells;
  std::stringstream ss(spec);
  std::string cell;
  while (std::getline(ss, cell, ';')) {
    if (cell.empty()) continue;
    SweepCell c;
    std::stringstream cs(cell);
    std::string kv;
    while (std::getline(cs, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("grid entry '" + kv + "' is not key=value");
      const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      auto num = [&] {
        try {
          std::size_t used = 0;
          const int n = std::stoi(v, &used);
          if (used != v.size()) throw std::invalid_argument(v);
          return n;
        } catch (const std::exception&) {
          throw UsageError("grid value '" + v + "' for " + k + " is not an integer");
        }
      };
      if (k == "r" || k == "ranks") {
        c.ranks = num();
      } else if (k == "t" || k == "threads") {
        c.threads = num();
      } else if (k == "d" || k == "depth") {
        c.depth = num();
      } else if (k == "p" || k == "pack-threads") {
        c.pack_threads = v == "auto" ? 0 : num();
      } else {
        throw UsageError("unknown grid key '" + k + "' (r, t, d, p)");
      }
    }
    cells.push_back(c);
  }
  if (cells.empty()) throw UsageError("empty sweep grid");
  return cells;
}

RunConfig apply(const RunConfig& base, const SweepCell& cell) {
  RunConfig c = base;
  if (cell.ranks >= 0) c.ranks = cell.ranks;
  if (cell.threads >= 0) c.threads = cell.threads;
  if (cell.depth >= 0) c.depth = cell.depth;
  if (cell.pack_threads >= -1) c.pack_threads = cell.pack_threads;
  return c;
}

SweepResult sweep(const RunConfig& base, const std::vector<SweepCell>& cells, const LabeledImage& img,
                  const RunFn& runner) {
  SweepResult out;
  out.table = {{"rows", nlohmann::json::array()}, {"ok", true}};
  for (const SweepCell& cell : cells) {
    const RunConfig c = apply(base, cell);
    RunResult r;
    try {
      r = runner(c, img);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      out.ok = false;
      out.table["ok"] = false;
      out.table["error"] = e.what();
      break;
    }
    nlohmann::json row{{"ranks", c.mode == Mode::Mw ? std::max(c.ranks, 1) : 0},
                       {"threads", c.threads},
                       {"depth", c.depth},
                       {"pack_threads", c.pack_threads == 0 ? nlohmann::json("auto") : nlohmann::json(c.pack_threads)},
                       {"wall", r.report["mean"]["wall"]},
                       {"elements", r.mesh.alive_count()},
                       {"kept", r.kept},
                       {"ok", r.audits.ok()},
                       {"report", r.report}};
    for (Category cat : kCategories) {
      const std::string k(category_name(cat));
      row[k] = r.report["mean"][k];
    }
    row["communication"] = r.report["mean"]["communication"];
    out.table["rows"].push_back(row);
    if (!r.audits.ok()) {
      out.ok = false;
      out.table["ok"] = false;
      break;
    }
  }
  return out;
}

std::string sweep_csv(const nlohmann::json& table) {
  std::ostringstream os;
  os << "ranks,threads,depth,pack_threads,wall";
  for (Category c : kCategories) os << ',' << category_name(c);
  os << ",communication,elements,kept,ok\n";
  for (const auto& r : table.at("rows")) {
    const auto& p = r.at("pack_threads");
    os << r.at("ranks").get<int>() << ',' << r.at("threads").get<int>() << ',' << r.at("depth").get<int>() << ','
       << (p.is_string() ? p.get<std::string>() : std::to_string(p.get<int>())) << ','
       << r.at("wall").get<double>();
    for (Category c : kCategories) os << ',' << r.at(std::string(category_name(c))).get<double>();
    os << ',' << r.at("communication").get<double>() << ',' << r.at("elements").get<std::size_t>() << ','
       << r.at("kept").get<std::size_t>() << ',' << (r.at("ok").get<bool>() ? 1 : 0) << '\n';
  }
  return os.str();
}

AuditListing audit_mesh(const TetMesh& mesh, const LabeledImage* img, const RefinementRule* rule) {
  AuditListing out;
  for (const DelaunayViolation& v : audit_delaunay(mesh)) {
    std::ostringstream os;
    os << "delaunay: vertex " << mesh.vertex_gid(v.vertex) << " lies inside the circumsphere of tet "
       << mesh.tet(v.tet).gid;
    out.lines.push_back(os.str());
    ++out.counts.delaunay;
  }
  for (const AdjacencyIssue& a : audit_adjacency(mesh)) {
    std::ostringstream os;
    os << "adjacency: tet " << mesh.tet(a.tet).gid;
    if (a.face >= 0) os << " face " << a.face;
    os << ": " << a.what;
    out.lines.push_back(os.str());
    ++out.counts.adjacency;
  }
  if (img && rule) {
    const BadnessOracle oracle(*img, *rule);
    for (TetId t : scan_bad(mesh, oracle)) {
      out.lines.push_back("quality: tet " + std::to_string(mesh.tet(t).gid) + " violates the refinement rule");
      ++out.counts.bad;
    }
  }
  return out;
}

namespace {

void add_run_flags(CLI::App& app, RunConfig& c, std::string& mode, std::string& pack, std::string& transport) {
  app.add_option("--mode", mode, "seq | shared | mw")->check(CLI::IsMember({"seq", "shared", "mw"}));
  auto* src = app.add_option_group("input");
  src->add_option("--phantom", c.phantom, "synthetic phantom, e.g. sphere:r=16,dims=64");
  src->add_option("--image", c.image, "DMI1 labeled-voxel file");
  app.add_option("--h", c.h, "target circumradius bound (mm)")->required();
  app.add_option("--rho", c.rho, "radius-edge bound");
  app.add_option("--octree-depth", c.depth, "octree depth (mw leaves = 8^depth)");
  app.add_option("--coarse-h", c.coarse_h, "background mesh size (default diag / 2^(max(depth,2)+1))");
  app.add_option("--ranks", c.ranks, "mw worker ranks");
  app.add_option("--threads-per-rank", c.threads, "refinement threads per rank");
  app.add_option("--pack-threads", pack, "pack/unpack threads: 1 or auto");
  app.add_option("--transport", transport, "inproc | socket")->check(CLI::IsMember({"inproc", "socket"}));
  app.add_flag("--serve-while-meshing", c.serve_while_meshing, "serve data requests during refinement");
  app.add_option("--report", c.report, "JSON report path");
  app.add_option("--csv", c.csv, "per-rank CSV path");
  app.add_option("--dump-mesh", c.dump, "mesh dump path");
  app.add_option("--grant-log", c.grant_log, "grant log path (JSON lines)");
  app.add_option("--seed", c.seed, "seed echoed into the report");
  app.add_option("--time-limit", c.time_limit, "wall-time cap in seconds (0: none)");
  app.add_flag("!--skip-delaunay-audit", c.delaunay_audit, "skip the brute-force Delaunay audit");
}

void finish_flags(RunConfig& c, const std::string& mode, const std::string& pack, const std::string& transport,
                  bool ranks_given) {
  c.mode = parse_mode(mode);
  if (pack == "auto") {
    c.pack_threads = 0;
  } else {
    try {
      std::size_t used = 0;
      c.pack_threads = std::stoi(pack, &used);
      if (used != pack.size() || c.pack_threads < 1) throw std::invalid_argument(pack);
    } catch (const std::exception&) {
      throw UsageError("--pack-threads takes a positive count or auto, not '" + pack + "'");
    }
  }
  c.transport = transport == "socket" ? TransportKind::Socket : TransportKind::Inproc;
  if (ranks_given && c.mode != Mode::Mw) throw UsageError("--ranks only applies to --mode mw");
  if (ranks_given && c.ranks < 1) throw UsageError("--ranks must be at least 1");
}

void summary(std::ostream& os, const RunConfig& c, const RunResult& r) {
  os << mode_name(c.mode) << ": elements " << r.mesh.alive_count() << " (kept " << r.kept << "), insertions "
     << r.stats.insertions << ", sliver fraction " << r.quality.sliver_fraction << ", wall "
     << r.report["max"]["wall"].get<double>() << " s, audits " << (r.audits.ok() ? "ok" : "FAILED") << '\n';
  if (!r.audits.ok()) os << "  " << r.audits.to_json().dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"i2m: parallel Delaunay image-to-mesh"};
  app.set_help_flag("--help", "print help");
  app.require_subcommand(1);

  RunConfig rc;
  std::string mode = "seq", pack = "1", transport = "inproc";
  auto* run_cmd = app.add_subcommand("run", "mesh one configuration");
  add_run_flags(*run_cmd, rc, mode, pack, transport);

  RunConfig sc;
  std::string smode = "mw", spack = "1", stransport = "inproc", grid;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a grid of configurations");
  add_run_flags(*sweep_cmd, sc, smode, spack, stransport);
  sweep_cmd->add_option("--grid", grid, "cells separated by ';', e.g. r=4,t=1,d=2,p=1;r=4,t=1,d=3,p=auto")
      ->required();

  std::string input, aphantom, aimage;
  double ah = 0.0, arho = 2.0;
  auto* audit_cmd = app.add_subcommand("audit", "check a mesh dump");
  audit_cmd->add_option("--input", input, "mesh dump from run --dump-mesh")->required();
  audit_cmd->add_option("--phantom", aphantom, "image for the quality scan");
  audit_cmd->add_option("--image", aimage, "image for the quality scan");
  audit_cmd->add_option("--h", ah, "sizing for the quality scan");
  audit_cmd->add_option("--rho", arho, "radius-edge bound for the quality scan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run_cmd) {
      finish_flags(rc, mode, pack, transport, run_cmd->count("--ranks") > 0);
      rc.validate();
      const LabeledImage img = load_image(rc);
      const RunResult r = run(rc, img);
      write_outputs(rc, r);
      summary(std::cout, rc, r);
      return r.audits.ok() ? kExitOk : kExitAudit;
    }
    if (*sweep_cmd) {
      finish_flags(sc, smode, spack, stransport, sweep_cmd->count("--ranks") > 0);
      const auto cells = parse_grid(grid);
      for (const SweepCell& cell : cells) apply(sc, cell).validate();
      const LabeledImage img = load_image(sc);
      const SweepResult s = sweep(sc, cells, img);
      if (!sc.report.empty()) open_out(sc.report) << s.table.dump(2) << '\n';
      if (!sc.csv.empty()) open_out(sc.csv) << sweep_csv(s.table);
      std::cout << sweep_csv(s.table);
      if (s.table.contains("error")) std::cerr << "sweep stopped: " << s.table["error"].get<std::string>() << '\n';
      return s.ok ? kExitOk : kExitAudit;
    }
    if (*audit_cmd) {
      if (!aphantom.empty() && !aimage.empty()) throw UsageError("give at most one of --phantom and --image");
      const bool scan = !aphantom.empty() || !aimage.empty();
      if (scan && !(ah > 0.0)) throw UsageError("the quality scan needs --h");
      const TetMesh mesh = read_mesh_dump(input);
      std::optional<LabeledImage> img;
      RefinementRule rule;
      if (scan) {
        RunConfig tmp;
        tmp.phantom = aphantom;
        tmp.image = aimage;
        img = load_image(tmp);
        rule.rho_bar = arho;
        rule.sizing.h = ah;
        rule.validate(*img);
      }
      const AuditListing a = audit_mesh(mesh, img ? &*img : nullptr, scan ? &rule : nullptr);
      for (const std::string& l : a.lines) std::cout << l << '\n';
      const QualityReport q = quality_report(mesh, img ? &*img : nullptr);
      std::cout << "tets " << mesh.alive_count() << ", vertices " << mesh.vertex_count() << ", dihedral ["
                << q.min_dihedral << ", " << q.max_dihedral << "], sliver fraction " << q.sliver_fraction << '\n';
      std::cout << (a.lines.empty() ? "PASS" : "FAIL") << ": " << a.lines.size() << " violation(s)\n";
      return a.lines.empty() ? kExitOk : kExitAudit;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return kExitProtocol;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return kExitProtocol;
  } catch (const ImageError& e) {
    std::cerr << "image error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitAudit;
  }
  return kExitUsage;
}

}  // namespace i2m::cli
