#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "qmri/io.hpp"

namespace qmri::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kT1Window = 2000.0, kT2Window = 120.0;  // ms

std::string subject_dir(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject_%03d", index);
  return buf;
}

std::ostream& log(const Context& ctx) {
  static std::ostringstream sink;
  return ctx.log ? *ctx.log : sink;
}

// Runs fn(0..n-1) on up to `threads` workers; the lowest-index exception wins.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_config(const Context& ctx) {
  fs::create_directories(ctx.out);
  write_json(ctx.out / "config.json", to_json(ctx.config));
}

Tensor mask_tensor(const std::vector<std::uint8_t>& m, std::int64_t h, std::int64_t w) {
  return Tensor({h, w}, std::vector<double>(m.begin(), m.end()));
}

std::vector<std::uint8_t> mask_from(const Tensor& t) {
  std::vector<std::uint8_t> out;
  for (double v : t.values()) out.push_back(v != 0.0);
  return out;
}

const char* task_name(SequenceKind kind) { return kind == SequenceKind::molli ? "T1" : "T2"; }

SequenceKind parse_sequence(const std::string& s) {
  if (s == "molli") return SequenceKind::molli;
  if (s == "t2prep") return SequenceKind::t2prep;
  throw std::invalid_argument("unknown sequence \"" + s + "\"");
}

Tensor frame(const Tensor& frames, std::int64_t t) {
  return reshape(slice(frames, 0, t, 1), {frames.dim(1), frames.dim(2), 2});
}

GrayImage map_panel(const Tensor& map, SequenceKind kind) {
  return to_gray(map, 0.0, kind == SequenceKind::molli ? kT1Window : kT2Window);
}

json read_manifest(const fs::path& dir, const std::string& format) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw std::invalid_argument(dir.string() + ": no manifest.json");
  json m = read_json(p);
  if (!m.is_object() || m.value("format", "") != format) {
    throw std::invalid_argument(dir.string() + ": not a " + format + " directory");
  }
  return m;
}

// ---- datasets ---------------------------------------------------------------

struct Dataset {
  json manifest;
  SequenceKind kind = SequenceKind::molli;
  std::vector<Subject> subjects;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir, "qmri-dataset");
  d.kind = parse_sequence(d.manifest.at("sequence").at("kind").get<std::string>());
  for (const auto& e : d.manifest.at("subjects")) {
    Subject s;
    s.index = e.at("index").get<int>();
    s.seed = e.at("seed").get<std::uint64_t>();
    s.sequence = d.kind == SequenceKind::molli ? SequenceSpec::molli() : SequenceSpec::t2prep();
    const fs::path sd = dir / e.at("dir").get<std::string>();
    s.maps.t1 = load_tensor(sd / "t1.qtns");
    s.maps.t2 = load_tensor(sd / "t2.qtns");
    s.maps.pd = load_tensor(sd / "pd.qtns");
    s.maps.support = mask_from(load_tensor(sd / "support.qtns"));
    s.frames = load_tensor(sd / "frames.qtns");
    s.csm = load_tensor(sd / "csm.qtns");
    s.kspace = load_tensor(sd / "kspace.qtns");
    if (s.frames.dim(0) != s.sequence.frames()) throw std::invalid_argument(sd.string() + ": frame count mismatch");
    d.subjects.push_back(std::move(s));
  }
  if (d.subjects.empty()) throw std::invalid_argument(dir.string() + ": dataset has no subjects");
  return d;
}

std::vector<int> selected(const std::string& which, int count) {
  const Split split = split_dataset(count);
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  std::vector<int> all(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) all[static_cast<std::size_t>(i)] = i;
  return all;
}

// ---- reconstructions on disk ------------------------------------------------

struct ReconSet {
  fs::path dir;
  json manifest;
  Dataset data;
  std::string label;  // e.g. "unet_lt T1 8x"
};

ReconSet load_recon(const fs::path& dir) {
  ReconSet r;
  r.dir = dir;
  r.manifest = read_manifest(dir, "qmri-recon");
  r.data = load_dataset(r.manifest.at("data").get<std::string>());
  r.label = r.manifest.at("method").get<std::string>() + " " + task_name(r.data.kind) + " " +
            std::to_string(r.manifest.at("accel").get<int>()) + "x";
  return r;
}

struct Scored {
  SubjectScore score;
  ParamMap map;
};

Scored score(const ReconSet& r, const json& entry, const Context& ctx) {
  const int index = entry.at("index").get<int>();
  const Subject& s = r.data.subjects.at(static_cast<std::size_t>(index));
  const fs::path sd = r.dir / entry.at("dir").get<std::string>();
  const Tensor recon = load_tensor(sd / "recon.qtns"), reference = load_tensor(sd / "reference.qtns");
  FitConfig fit = ctx.config.fit;
  fit.threads = 1;
  Scored out;
  out.score = score_subject(s, recon, reference, fit, ctx.config.eval);
  out.map = fit_maps(scale(recon, 1.0 / kDefaultKSpaceScale), s.sequence, fit);
  return out;
}

struct Row {
  std::string label;
  std::vector<SubjectScore> scores;
};

ImageMetrics mean_of(const std::vector<SubjectScore>& s, bool maps) {
  ImageMetrics m;
  for (const auto& x : s) {
    const ImageMetrics& v = maps ? x.maps : x.images;
    m.psnr += v.psnr;
    m.ssim += v.ssim;
    m.nmse += v.nmse;
    m.rmse += v.rmse;
  }
  const double n = static_cast<double>(s.size());
  return {m.psnr / n, m.ssim / n, m.nmse / n, m.rmse / n};
}

std::string fmt_psnr(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string table_text(const std::vector<Row>& rows) {
  std::ostringstream t;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %9s %8s %10s %9s %8s %10s %4s\n", "method task accel", "img_psnr", "img_ssim",
                "img_nmse", "map_psnr", "map_ssim", "map_nmse", "n");
  t << buf;
  for (const auto& r : rows) {
    const ImageMetrics im = mean_of(r.scores, false), mm = mean_of(r.scores, true);
    std::snprintf(buf, sizeof buf, "%-20s %9s %8.4f %10.3e %9s %8.4f %10.3e %4zu\n", r.label.c_str(),
                  fmt_psnr(im.psnr).c_str(), im.ssim, im.nmse, fmt_psnr(mm.psnr).c_str(), mm.ssim, mm.nmse,
                  r.scores.size());
    t << buf;
  }
  return t.str();
}

json summary_json(const std::vector<Row>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"label", r.label},
                   {"subjects", r.scores.size()},
                   {"images", to_json(mean_of(r.scores, false))},
                   {"maps", to_json(mean_of(r.scores, true))}});
  }
  return {{"format", "qmri-eval"}, {"format_version", 1}, {"rows", out}};
}

std::vector<ReconSet> load_inputs(const std::vector<fs::path>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("--input: at least one reconstruction directory is required");
  std::vector<ReconSet> sets;
  std::set<std::string> labels;
  for (const auto& in : inputs) {
    sets.push_back(load_recon(in));
    if (!labels.insert(sets.back().label).second) {
      throw std::invalid_argument("--input: two inputs share the row \"" + sets.back().label + "\"");
    }
  }
  return sets;
}

std::string dir_label(std::string label) {
  for (auto& c : label)
    if (c == ' ') c = '_';
  return label;
}

}  // namespace

// ---- simulate ---------------------------------------------------------------

void cmd_simulate(const Context& ctx) {
  const DatasetConfig& dc = ctx.config.phantom;
  write_config(ctx);
  std::vector<json> entries(static_cast<std::size_t>(dc.subjects));
  parallel_for(entries.size(), ctx.threads, [&](std::size_t i) {
    const Subject s = make_subject(dc, static_cast<int>(i));
    const fs::path sd = ctx.out / subject_dir(s.index);
    fs::create_directories(sd);
    const auto h = s.maps.height(), w = s.maps.width();
    save_tensor(sd / "frames.qtns", s.frames, true);
    save_tensor(sd / "kspace.qtns", s.kspace, true);
    save_tensor(sd / "csm.qtns", s.csm, true);
    save_tensor(sd / "t1.qtns", s.maps.t1, false);
    save_tensor(sd / "t2.qtns", s.maps.t2, false);
    save_tensor(sd / "pd.qtns", s.maps.pd, false);
    save_tensor(sd / "support.qtns", mask_tensor(s.maps.support, h, w), false);
    entries[i] = {{"index", s.index}, {"seed", s.seed}, {"dir", subject_dir(s.index)}, {"frames", s.frames.dim(0)}};
  });
  const SequenceSpec seq = dc.sequence == SequenceKind::molli ? SequenceSpec::molli() : SequenceSpec::t2prep();
  const Split split = split_dataset(dc.subjects);
  write_json(ctx.out / "manifest.json",
             {{"format", "qmri-dataset"},
              {"format_version", 1},
              {"sequence", {{"kind", sequence_name(seq.kind)}, {"times", seq.times}, {"inversion_factor", seq.inversion_factor}}},
              {"height", dc.height},
              {"width", dc.width},
              {"num_coils", dc.num_coils},
              {"kspace_layout", "[coil, frame, phase-encode, readout, re/im]"},
              {"raw_scale", dc.raw_scale},
              {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
              {"subjects", entries}});
  log(ctx) << "simulated " << dc.subjects << " subjects into " << ctx.out.string() << "\n";
}

// ---- train ------------------------------------------------------------------

void cmd_train(const Context& ctx, const fs::path& data_dir) {
  if (data_dir.empty()) throw std::invalid_argument("train requires --data");
  const Dataset data = load_dataset(data_dir);
  write_config(ctx);
  const Split split = split_dataset(static_cast<int>(data.subjects.size()));
  // Append-only metric log, one JSON record per line.
  std::ofstream metrics(ctx.out / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (ctx.out / "metrics.jsonl").string());
  const TrainResult r = train(data.subjects, split, ctx.config.model, ctx.config.train, [&](const EpochLog& e) {
    for (const auto& rec : metric_records(e)) metrics << rec.dump() << "\n";
    metrics.flush();
    if (!std::isfinite(e.train_loss) || !std::isfinite(e.val_loss)) {
      throw NumericFailure("training diverged at epoch " + std::to_string(e.epoch));
    }
    log(ctx) << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << "\n";
  });
  save_model(ctx.out / "checkpoint.qtns", r.best);
  save_model(ctx.out / "last.qtns", r.last);
  write_json(ctx.out / "train_log.json", {{"model", model_kind_name(ctx.config.model.kind)},
                                          {"best_epoch", r.best_epoch},
                                          {"initial_train_loss", r.initial_train_loss},
                                          {"final_train_loss", r.final_train_loss},
                                          {"initial_val_loss", r.initial_val_loss}});
}

// ---- recon ------------------------------------------------------------------

void cmd_recon(const Context& ctx, const fs::path& data_dir, const std::string& method, const fs::path& checkpoint) {
  if (data_dir.empty()) throw std::invalid_argument("recon requires --data");
  const bool learned = method != "zf" && method != "cgsense";
  Model model;
  if (learned) {
    const ModelKind kind = parse_model_kind(method);  // rejects unknown methods
    if (checkpoint.empty()) throw std::invalid_argument("method " + method + " requires --checkpoint");
    if (!fs::exists(checkpoint)) throw std::invalid_argument("--checkpoint: no such file: " + checkpoint.string());
    model = load_model(checkpoint);
    if (model.config.kind != kind) {
      throw std::invalid_argument("--checkpoint holds a " + std::string(model_kind_name(model.config.kind)) +
                                  " model, not " + method);
    }
  } else if (!checkpoint.empty()) {
    throw std::invalid_argument("--checkpoint is only valid for learned methods");
  }
  const Dataset data = load_dataset(data_dir);
  const RunConfig& cfg = ctx.config;
  if (data.subjects[0].kspace.dim(2) != cfg.phantom.height || data.subjects[0].kspace.dim(3) != cfg.phantom.width) {
    throw std::invalid_argument("recon: dataset grid differs from phantom.height/width in the config");
  }
  write_config(ctx);
  const auto ids = selected(cfg.io.subjects, static_cast<int>(data.subjects.size()));
  std::vector<json> entries(ids.size());
  parallel_for(ids.size(), ctx.threads, [&](std::size_t n) {
    NoGradGuard no_grad;
    const Subject& s = data.subjects.at(static_cast<std::size_t>(ids[n]));
    MaskSpec ms = validation_mask(s, cfg.mask.accel, cfg.mask.center_lines);
    if (cfg.mask.offset >= 0) ms.offset_s = cfg.mask.offset;
    const Acquisition a = acquire(s, ms, cfg.train.csm);
    const Tensor reference = reference_frames(s, a.csm);
    const Tensor zf = recon_zero_fill(a.y, a.csm);
    Tensor out;
    bool converged = true;
    if (method == "zf") {
      out = zf;
    } else if (method == "cgsense") {
      CgResult r = recon_cg_sense(a, cfg.model.modl.cg);
      out = r.x;
      converged = r.converged;
    } else {
      out = reconstruct(a, model, &converged);
    }
    const fs::path sd = ctx.out / subject_dir(s.index);
    fs::create_directories(sd);
    save_tensor(sd / "recon.qtns", out, true);
    save_tensor(sd / "zero_fill.qtns", zf, true);
    save_tensor(sd / "reference.qtns", reference, true);
    if (cfg.io.png) {
      std::vector<GrayImage> rows;
      for (std::int64_t t = 0; t < out.dim(0); ++t) {
        rows.push_back(hstack({to_gray(magnitude(frame(zf, t))), to_gray(magnitude(frame(out, t))),
                               to_gray(magnitude(frame(reference, t)))}));
      }
      write_png(sd / "panel.png", vstack(rows));
    }
    entries[n] = {{"index", s.index},
                  {"dir", subject_dir(s.index)},
                  {"offset", ms.offset_s},
                  {"sampled_lines", sampled_line_count(a.y.mask)},
                  {"converged", converged}};
  });
  write_json(ctx.out / "manifest.json", {{"format", "qmri-recon"},
                                         {"format_version", 1},
                                         {"method", method},
                                         {"accel", cfg.mask.accel},
                                         {"center_lines", cfg.mask.center_lines},
                                         {"data", data_dir.string()},
                                         {"scale", kDefaultKSpaceScale},
                                         {"subjects", entries}});
  int failed = 0;
  for (const auto& e : entries) failed += !e.at("converged").get<bool>();
  if (failed > 0) {
    const std::string msg = std::to_string(failed) + " subject(s) did not converge";
    if (ctx.strict) throw NumericFailure(msg);
    log(ctx) << "warning: " << msg << "\n";
  }
}

// ---- fit --------------------------------------------------------------------

void cmd_fit(const Context& ctx, const fs::path& input) {
  if (input.empty()) throw std::invalid_argument("fit requires --input");
  if (!fs::exists(input / "manifest.json")) throw std::invalid_argument("--input: no manifest.json in " + input.string());
  const json head = read_json(input / "manifest.json");
  const bool is_recon = head.value("format", "") == "qmri-recon";

  // (subject index, frames at unit image scale, where they came from)
  Dataset data;
  std::vector<int> ids;
  std::vector<fs::path> sources;
  if (is_recon) {
    ReconSet r = load_recon(input);
    data = std::move(r.data);
    for (const auto& e : r.manifest.at("subjects")) {
      ids.push_back(e.at("index").get<int>());
      sources.push_back(input / e.at("dir").get<std::string>() / "recon.qtns");
    }
  } else {
    data = load_dataset(input);
    ids = selected(ctx.config.io.subjects, static_cast<int>(data.subjects.size()));
    for (int i : ids) sources.push_back(input / subject_dir(i) / "frames.qtns");
  }
  write_config(ctx);
  FitConfig fit = ctx.config.fit;
  fit.threads = 1;
  std::vector<json> entries(ids.size());
  std::vector<SubjectScore> scores(ids.size());
  parallel_for(ids.size(), ctx.threads, [&](std::size_t n) {
    const Subject& s = data.subjects.at(static_cast<std::size_t>(ids[n]));
    Tensor frames = load_tensor(sources[n]);
    if (is_recon) frames = scale(frames, 1.0 / kDefaultKSpaceScale);
    const ParamMap pm = fit_maps(frames, s.sequence, fit);
    const Tensor& truth = data.kind == SequenceKind::molli ? s.maps.t1 : s.maps.t2;
    scores[n].maps = map_metrics(truth, pm.value, s.maps.support, pm.fitted, ctx.config.eval);
    const fs::path sd = ctx.out / subject_dir(s.index);
    fs::create_directories(sd);
    const auto h = pm.height(), w = pm.width();
    save_tensor(sd / "map.qtns", pm.value, false);
    save_tensor(sd / "residual.qtns", pm.residual_norm, false);
    save_tensor(sd / "fitted.qtns", mask_tensor(pm.fitted, h, w), false);
    save_tensor(sd / "converged.qtns", mask_tensor(pm.converged, h, w), false);
    if (data.kind == SequenceKind::molli) {
      save_tensor(sd / "a.qtns", pm.a, false);
      save_tensor(sd / "b.qtns", pm.b, false);
      save_tensor(sd / "t1_star.qtns", pm.t1_star, false);
    }
    if (ctx.config.io.png) write_png(sd / "map.png", hstack({map_panel(pm.value, data.kind), map_panel(truth, data.kind)}));
    std::int64_t fitted = 0, converged = 0;
    for (std::size_t p = 0; p < pm.fitted.size(); ++p) {
      fitted += pm.fitted[p];
      converged += pm.converged[p];
    }
    entries[n] = {{"index", s.index},
                  {"dir", subject_dir(s.index)},
                  {"map", to_json(scores[n].maps)},
                  {"fitted_pixels", fitted},
                  {"converged_pixels", converged}};
  });
  write_json(ctx.out / "fit.json", {{"format", "qmri-fit"},
                                    {"format_version", 1},
                                    {"task", task_name(data.kind)},
                                    {"source", is_recon ? "recon" : "dataset"},
                                    {"subjects", entries},
                                    {"mean_map", to_json(mean_of(scores, true))}});
}

// ---- eval -------------------------------------------------------------------

void cmd_eval(const Context& ctx, const std::vector<fs::path>& inputs) {
  const auto sets = load_inputs(inputs);
  write_config(ctx);
  std::vector<Row> rows;
  for (const auto& r : sets) {
    const json& subjects = r.manifest.at("subjects");
    Row row{r.label, std::vector<SubjectScore>(subjects.size())};
    const fs::path dir = ctx.out / dir_label(r.label);
    fs::create_directories(dir);
    parallel_for(subjects.size(), ctx.threads, [&](std::size_t n) {
      row.scores[n] = score(r, subjects[n], ctx).score;
      MetricReport rep;
      rep.images = row.scores[n].images;
      rep.maps = row.scores[n].maps;
      rep.has_maps = true;
      rep.data_range_policy = ctx.config.eval.data_range > 0.0 ? "fixed" : "reference-max";
      write_json(dir / (subjects[n].at("dir").get<std::string>() + ".json"), to_json(rep));
    });
    rows.push_back(std::move(row));
  }
  const std::string table = table_text(rows);
  write_text(ctx.out / "table.txt", table);
  write_json(ctx.out / "summary.json", summary_json(rows));
  log(ctx) << table;
}

// ---- report -----------------------------------------------------------------

// One figure per subject: rows reference, zero fill, then each input; columns
// the brightest reference frame (min-max) and the fitted map (fixed window).
void cmd_report(const Context& ctx, const std::vector<fs::path>& inputs) {
  const auto sets = load_inputs(inputs);
  const json& subjects = sets[0].manifest.at("subjects");
  auto indices = [](const json& entries) {
    std::vector<int> out;
    for (const auto& e : entries) out.push_back(e.at("index").get<int>());
    return out;
  };
  for (const auto& r : sets) {
    if (indices(r.manifest.at("subjects")) != indices(subjects) || r.data.kind != sets[0].data.kind) {
      throw std::invalid_argument("report: inputs cover different subjects or sequences");
    }
  }
  write_config(ctx);
  std::vector<Row> rows;
  for (const auto& r : sets) rows.push_back({r.label, std::vector<SubjectScore>(subjects.size())});
  const SequenceKind kind = sets[0].data.kind;
  FitConfig fit = ctx.config.fit;
  fit.threads = 1;
  parallel_for(subjects.size(), ctx.threads, [&](std::size_t n) {
    const fs::path sd0 = sets[0].dir / subjects[n].at("dir").get<std::string>();
    const Subject& s = sets[0].data.subjects.at(static_cast<std::size_t>(subjects[n].at("index").get<int>()));
    const Tensor reference = load_tensor(sd0 / "reference.qtns");
    std::int64_t brightest = 0;
    double best = -1.0;
    for (std::int64_t t = 0; t < reference.dim(0); ++t) {
      double e = 0.0;
      for (double v : magnitude(frame(reference, t)).values()) e += v * v;
      if (e > best) best = e, brightest = t;
    }
    auto panel_row = [&](const Tensor& frames, const Tensor& map) {
      return hstack({to_gray(magnitude(frame(frames, brightest))), map_panel(map, kind)});
    };
    auto fitted = [&](const Tensor& frames) {
      return fit_maps(scale(frames, 1.0 / kDefaultKSpaceScale), s.sequence, fit).value;
    };
    std::vector<GrayImage> figure;
    figure.push_back(panel_row(reference, kind == SequenceKind::molli ? s.maps.t1 : s.maps.t2));
    const Tensor zf = load_tensor(sd0 / "zero_fill.qtns");
    figure.push_back(panel_row(zf, fitted(zf)));
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const Scored sc = score(sets[k], sets[k].manifest.at("subjects")[n], ctx);
      rows[k].scores[n] = sc.score;
      const Tensor recon = load_tensor(sets[k].dir / subjects[n].at("dir").get<std::string>() / "recon.qtns");
      figure.push_back(panel_row(recon, sc.map.value));
    }
    write_png(ctx.out / ("figure_" + subjects[n].at("dir").get<std::string>() + ".png"), vstack(figure));
  });
  const std::string table = table_text(rows);
  write_text(ctx.out / "table.txt", table);
  std::ostringstream md;
  md << "# Reconstruction report\n\n```\n" << table << "```\n\n";
  md << "Figure rows: reference (true map), zero fill";
  for (const auto& r : sets) md << ", " << r.label;
  md << ". Columns: brightest reference frame (min-max), " << task_name(kind) << " map (0-"
     << (kind == SequenceKind::molli ? kT1Window : kT2Window) << " ms).\n\n";
  for (const auto& e : subjects) md << "- figure_" << e.at("dir").get<std::string>() << ".png\n";
  write_text(ctx.out / "report.md", md.str());
  log(ctx) << table;
}

}  // namespace qmri::cli
