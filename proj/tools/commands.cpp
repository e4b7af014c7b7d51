#include "commands.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/annotate.hpp"
#include "nvsed/audio.hpp"
#include "nvsed/corpus_io.hpp"
#include "nvsed/error.hpp"
#include "nvsed/events.hpp"
#include "nvsed/frontend.hpp"
#include "nvsed/harness.hpp"
#include "nvsed/metrics.hpp"
#include "nvsed/model.hpp"
#include "nvsed/personalize.hpp"
#include "nvsed/server.hpp"
#include "nvsed/synthbench.hpp"
#include "nvsed/tcn.hpp"
#include "nvsed/train.hpp"

namespace fs = std::filesystem;

namespace nvsed::cli {

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kFormat, path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// Writes to `path`, or to stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << std::flush;
  } else {
    write_text(path, text);
  }
}

PostProcConfig load_postproc(const std::string& path, const ClassSet& classes) {
  if (path.empty()) return PostProcConfig::defaults();
  return postproc_from_json(read_json_file(path), classes);
}

template <typename T>
T parse_config(const nlohmann::json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, what + ": " + e.what());
  }
}

std::vector<fs::path> wav_files(const fs::path& in) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(in)) return {in};
  if (!fs::is_directory(in)) throw Error(ErrorCode::kIo, in.string() + " is neither a file nor a directory");
  for (const auto& entry : fs::directory_iterator(in)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && ext == ".wav") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Enrollment negatives: aggressor clips from a directory, else synthesized.
NegativePool negatives_for(const ModelWeights& weights, const std::string& aggressor_dir, double seconds,
                           std::uint64_t seed) {
  if (seconds <= 0.0) return {};
  if (!aggressor_dir.empty()) {
    const auto clips = load_corpus_dir(aggressor_dir, kLabelInflation, weights.classes);
    return make_negative_pool(weights, clips, seconds, seed);
  }
  const auto clips = synth_aggressors(2.0 * seconds, 10.0, derive_seed(seed, 1));
  return make_negative_pool(weights, clips, seconds, seed);
}

}  // namespace

void register_synth(CLI::App& app) {
  auto* cmd = app.add_subcommand("synth", "Generate the synthetic corpus (train/, eval/, aggressors/)");
  struct Opts {
    std::string spec, out;
    std::optional<std::uint64_t> seed;
    bool dump = false;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--spec", o->spec, "SynthSpec JSON (missing keys take defaults)");
  cmd->add_option("--out", o->out, "Output directory");
  cmd->add_option("--seed", o->seed, "Override the spec seed");
  cmd->add_flag("--dump-defaults", o->dump, "Print the default SynthSpec and exit");
  cmd->callback([o] {
    if (o->dump) {
      std::cout << nlohmann::json(SynthSpec{}).dump(2) << '\n';
      return;
    }
    if (o->out.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required");
    SynthSpec spec = o->spec.empty() ? SynthSpec{} : parse_config<SynthSpec>(read_json_file(o->spec), "synth spec");
    if (o->seed) spec.seed = *o->seed;
    spec.validate();
    const Corpus corpus = generate_corpus(spec);
    const fs::path out(o->out);
    write_corpus_dir(out / "train", corpus.train);
    write_corpus_dir(out / "eval", corpus.eval);
    write_corpus_dir(out / "aggressors", corpus.aggressors);
    write_text(out / "spec.json", nlohmann::json(spec).dump(2) + "\n");
    std::cerr << "wrote " << corpus.train.size() << " train, " << corpus.eval.size() << " eval and "
              << corpus.aggressors.size() << " aggressor clips to " << out.string() << '\n';
  });
}

void register_annotate(CLI::App& app) {
  auto* cmd = app.add_subcommand("annotate", "Energy-segment WAV files into label JSON lines");
  struct Opts {
    std::string in, cls, out;
    double sigma = 1.0;
    int min_frames = kMinSegmentFrames;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--in", o->in, "WAV file or directory of WAV files")->required();
  cmd->add_option("--class", o->cls, "Class of every clip (a sound, background or speech)")->required();
  cmd->add_option("--out", o->out, "Label file (default: stdout)");
  cmd->add_option("--sigma", o->sigma, "Threshold in standard deviations above the mean energy");
  cmd->add_option("--min-frames", o->min_frames, "Shortest kept segment in frames");
  cmd->callback([o] {
    const ClassSet classes;
    const int cls = classes.index_of(o->cls);
    const SegmentOptions seg{o->min_frames, o->sigma};
    std::string text;
    for (const auto& path : wav_files(o->in)) {
      const AudioClip clip = read_wav(path);
      LabelRecord r;
      r.audio_path = o->out.empty() ? path.string() : fs::relative(path, fs::absolute(o->out).parent_path()).string();
      r.cls = o->cls;
      std::vector<Segment> segs;
      if (cls == kBackgroundClass) {
        segs = annotate_background_clip(clip).segments;
      } else if (cls == kSpeechClass) {
        segs = annotate_speech_clip(clip).segments;
      } else {
        segs = energy_segment(clip, cls, seg);
      }
      for (const auto& s : segs) r.segments.emplace_back(s.start_frame, s.end_frame);
      text += to_json(r).dump() + "\n";
    }
    emit(o->out, text);
  });
}

void register_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train the detector from scratch");
  struct Opts {
    std::string corpus, aggressors, config, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    bool dump = false;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--corpus", o->corpus, "Sound corpus directory (labels.jsonl + WAVs)");
  cmd->add_option("--aggressors", o->aggressors, "Aggressor corpus directory");
  cmd->add_option("--config", o->config, "TrainConfig JSON (missing keys take defaults)");
  cmd->add_option("--out", o->out, "Output weight file");
  cmd->add_option("--seed", o->seed, "Override the config seed");
  cmd->add_option("--epochs", o->epochs, "Override the config epochs");
  cmd->add_flag("--dump-defaults", o->dump, "Print the default TrainConfig and exit");
  cmd->callback([o] {
    if (o->dump) {
      std::cout << nlohmann::json(TrainConfig{}).dump(2) << '\n';
      return;
    }
    if (o->corpus.empty() || o->out.empty()) throw Error(ErrorCode::kInvalidArgument, "--corpus and --out are required");
    TrainConfig cfg = o->config.empty() ? TrainConfig{} : parse_config<TrainConfig>(read_json_file(o->config), "train config");
    if (o->seed) cfg.seed = *o->seed;
    if (o->epochs) cfg.epochs = *o->epochs;
    const auto corpus = load_corpus_dir(o->corpus);
    std::vector<LabeledClip> aggressors;
    if (!o->aggressors.empty()) aggressors = load_corpus_dir(o->aggressors);
    try {
      const TrainResult result = train(corpus, aggressors, cfg, [](const EpochStats& s) {
        std::cerr << nlohmann::json{{"epoch", s.epoch}, {"train_loss", s.train_loss},
                                    {"validation_loss", s.validation_loss}}.dump()
                  << '\n';
      });
      save_checkpoint(o->out, result, cfg);
      std::cerr << "best epoch " << result.best_epoch << ", weights written to " << o->out << '\n';
    } catch (const TrainingDiverged& e) {
      const std::string path = o->out + ".last_good.nvsd";
      save_weights(e.last_good(), path);
      throw Error(ErrorCode::kDiverged, std::string(e.what()) + "; last good weights saved to " + path);
    }
  });
}

void register_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Score a model on a labeled corpus (JSON on stdout, table on stderr)");
  struct Opts {
    std::string model, eval, postproc, aggressors, out;
    bool one_active = false;
    bool quiet = false;
    int tolerance = kLabelInflation;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Weight file")->required();
  cmd->add_option("--eval", o->eval, "Evaluation corpus directory")->required();
  cmd->add_option("--postproc", o->postproc, "Post-processor JSON (default: theta 0.5, tau 10)");
  cmd->add_option("--aggressors", o->aggressors, "Aggressor corpus for an FP/hour figure");
  cmd->add_option("--tolerance", o->tolerance, "Matching tolerance in frames");
  cmd->add_option("--out", o->out, "Write the JSON report here instead of stdout");
  cmd->add_flag("--one-active", o->one_active, "Enable one detector at a time");
  cmd->add_flag("--quiet", o->quiet, "Skip the text table");
  cmd->callback([o] {
    const ModelWeights weights = load_weights(o->model);
    const PostProcConfig pp = load_postproc(o->postproc, weights.classes);
    const auto clips = load_corpus_dir(o->eval, kLabelInflation, weights.classes);
    const auto scored = score_clips(weights, clips);
    const EvalReport report = evaluate(scored, pp, o->one_active, {}, o->tolerance);
    nlohmann::json j = report.to_json(weights.classes);
    j["mode"] = o->one_active ? "one_active" : "all_active";
    j["clips"] = clips.size();
    if (!o->aggressors.empty()) {
      const auto agg = score_clips(weights, load_corpus_dir(o->aggressors, kLabelInflation, weights.classes));
      double seconds = 0.0;
      for (const auto& a : agg) seconds += a.duration_s;
      j["aggressors"] = {{"seconds", seconds}, {"fp_per_hour", false_positives_per_hour(agg, pp)}};
    }
    emit(o->out, j.dump(2) + "\n");
    if (!o->quiet) std::cerr << report.to_table(weights.classes);
  });
}

void register_optimize(CLI::App& app) {
  auto* cmd = app.add_subcommand("optimize", "Grid-search per-class post-processor parameters");
  struct Opts {
    std::string model, eval, aggressors, out, base, points;
    double lambda_fp = 0.01;
    double lambda_latency = 0.1;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Weight file")->required();
  cmd->add_option("--eval", o->eval, "Evaluation corpus directory")->required();
  cmd->add_option("--aggressors", o->aggressors, "Aggressor corpus directory");
  cmd->add_option("--base", o->base, "Starting post-processor JSON");
  cmd->add_option("--lambda-fp", o->lambda_fp, "Penalty per false positive per hour");
  cmd->add_option("--lambda-latency", o->lambda_latency, "Penalty per second of mean latency");
  cmd->add_option("--out", o->out, "postproc.json path (default: stdout)");
  cmd->add_option("--points", o->points, "CSV of every evaluated operating point");
  cmd->callback([o] {
    const ModelWeights weights = load_weights(o->model);
    const auto eval = score_clips(weights, load_corpus_dir(o->eval, kLabelInflation, weights.classes));
    std::vector<ScoredClip> agg;
    if (!o->aggressors.empty()) agg = score_clips(weights, load_corpus_dir(o->aggressors, kLabelInflation, weights.classes));
    OptimizeOptions opts;
    opts.lambda_fp = o->lambda_fp;
    opts.lambda_latency = o->lambda_latency;
    const OptimizeResult r = optimize(load_postproc(o->base, weights.classes), eval, agg, opts);
    emit(o->out, to_json(r.config, weights.classes).dump(2) + "\n");
    if (!o->points.empty()) {
      std::string csv = "class,theta,tau,theta_bg,f1,fp_per_hour,latency_s,objective\n";
      char line[256];
      for (const auto& p : r.points) {
        std::snprintf(line, sizeof line, "%s,%.2f,%d,%.2f,%.6f,%.4f,%.4f,%.6f\n",
                      p.cls < 0 ? "all" : weights.classes.name(p.cls).c_str(), p.theta, p.tau, p.theta_bg, p.f1,
                      p.fp_per_hour, p.latency_s, p.objective);
        csv += line;
      }
      write_text(o->points, csv);
    }
  });
}

void register_detect(CLI::App& app) {
  auto* cmd = app.add_subcommand("detect", "Stream audio through the detector, printing events as JSON lines");
  struct Opts {
    std::string model, postproc, wav;
    bool stdin_pcm = false;
    std::size_t chunk = 160;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Weight file")->required();
  cmd->add_option("--postproc", o->postproc, "Post-processor JSON (default: theta 0.5, tau 10)");
  auto* wav = cmd->add_option("--wav", o->wav, "16 kHz mono PCM16 WAV file");
  auto* pcm = cmd->add_flag("--stdin-pcm", o->stdin_pcm, "Read raw s16le mono 16 kHz from stdin");
  wav->excludes(pcm);
  cmd->add_option("--chunk", o->chunk, "Samples per processing step")->check(CLI::PositiveNumber);
  cmd->callback([o] {
    if (o->wav.empty() == !o->stdin_pcm) throw Error(ErrorCode::kInvalidArgument, "give exactly one of --wav or --stdin-pcm");
    auto weights = std::make_shared<const ModelWeights>(load_weights(o->model));
    const PostProcConfig pp = load_postproc(o->postproc, weights->classes);
    StreamingFrontend frontend;
    StreamSession session(weights);
    PostProcessor post(pp);
    auto feed = [&](std::span<const float> samples) {
      const FeatureMatrix feats = frontend.push(samples);
      if (feats.empty()) return;
      const FrameProbs probs = session.push(feats).probs;
      for (std::size_t t = 0; t < probs.rows(); ++t) {
        if (auto e = post.step(probs.row(t))) std::cout << to_json(*e, weights->classes).dump() << std::endl;
      }
    };
    if (!o->wav.empty()) {
      const AudioClip clip = read_wav(o->wav);
      for (std::size_t i = 0; i < clip.samples.size(); i += o->chunk) {
        const std::size_t n = std::min(o->chunk, clip.samples.size() - i);
        feed(std::span<const float>(clip.samples.data() + i, n));
      }
      return;
    }
    std::vector<char> bytes(2 * o->chunk);
    std::vector<float> samples;
    bool odd = false;
    char carry = 0;
    while (std::cin.read(bytes.data(), static_cast<std::streamsize>(bytes.size())) || std::cin.gcount() > 0) {
      const auto n = static_cast<std::size_t>(std::cin.gcount());
      samples.clear();
      std::size_t i = 0;
      if (odd && n > 0) {
        const auto v = static_cast<std::int16_t>(static_cast<unsigned char>(carry) |
                                                 (static_cast<unsigned char>(bytes[0]) << 8));
        samples.push_back(pcm16_to_float(v));
        i = 1;
        odd = false;
      }
      for (; i + 1 < n; i += 2) {
        const auto v = static_cast<std::int16_t>(static_cast<unsigned char>(bytes[i]) |
                                                 (static_cast<unsigned char>(bytes[i + 1]) << 8));
        samples.push_back(pcm16_to_float(v));
      }
      if (i < n) {
        carry = bytes[i];
        odd = true;
      }
      feed(samples);
    }
  });
}

void register_personalize(CLI::App& app) {
  auto* cmd = app.add_subcommand("personalize", "Fine-tune one class's head row on an enrollment recording");
  struct Opts {
    std::string model, enroll, cls, out, aggressors, user_id;
    int shots = 5;
    double negative_seconds = 60.0;
    std::uint64_t seed = 1;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Generic weight file")->required();
  cmd->add_option("--enroll", o->enroll, "Enrollment WAV with the sound repeated")->required();
  cmd->add_option("--class", o->cls, "Sound class being enrolled")->required();
  cmd->add_option("--shots", o->shots, "Repetitions used (1-5)")->check(CLI::Range(0, 5));
  cmd->add_option("--out", o->out, "Personalized weight file")->required();
  cmd->add_option("--aggressors", o->aggressors, "Aggressor corpus for negatives (default: synthesized)");
  cmd->add_option("--negative-seconds", o->negative_seconds, "Seconds of aggressor negatives");
  cmd->add_option("--user-id", o->user_id, "Stored in the weight header");
  cmd->add_option("--seed", o->seed, "Seed for negative sampling");
  cmd->callback([o] {
    const ModelWeights weights = load_weights(o->model);
    const int cls = weights.classes.index_of(o->cls);
    if (!is_sound_class(cls)) throw Error(ErrorCode::kInvalidArgument, "'" + o->cls + "' is not a sound class");
    LabeledClip enroll = annotate_sound_clip(read_wav(o->enroll), cls);
    if (enroll.segments.empty()) {
      throw Error(ErrorCode::kEnrollmentFailed,
                  "no sound found in " + o->enroll + "; record louder or closer with pauses between repetitions");
    }
    const NegativePool pool = negatives_for(weights, o->aggressors, o->negative_seconds, o->seed);
    const std::array<int, 1> target{cls};
    ModelWeights out = fit_head(weights, enroll, target, o->shots, &pool);
    if (!o->user_id.empty()) out.user_id = o->user_id;
    save_weights(out, o->out);
    std::cout << nlohmann::json{{"class", o->cls},
                                {"segments_found", enroll.segments.size()},
                                {"shots", o->shots},
                                {"negative_frames", pool.embeddings.rows()},
                                {"out", o->out}}.dump()
              << '\n';
  });
}

void register_audit(CLI::App& app) {
  auto* cmd = app.add_subcommand("audit", "Flag clips whose given label disagrees with the model");
  struct Opts {
    std::string model, corpus, out;
    double inject = 0.0;
    std::uint64_t seed = 1;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Weight file")->required();
  cmd->add_option("--corpus", o->corpus, "Labeled corpus directory")->required();
  cmd->add_option("--out", o->out, "Report path (default: stdout)");
  cmd->add_option("--inject-swaps", o->inject, "Swap this fraction of labels first and score recovery");
  cmd->add_option("--seed", o->seed, "Seed for --inject-swaps");
  cmd->callback([o] {
    const ModelWeights weights = load_weights(o->model);
    std::vector<LabeledClip> clips = load_corpus_dir(o->corpus, kLabelInflation, weights.classes);
    const auto& names = weights.classes;
    nlohmann::json j;
    AuditReport report;
    if (o->inject > 0.0) {
      std::vector<ScoredClip> truth;
      for (const auto& c : clips) truth.push_back({{}, c.segments, 0.0});
      const auto cls = classes_in(truth);
      const SwapExperiment ex = run_swap_audit(weights, clips, cls, o->inject, o->seed);
      report = ex.report;
      j["injected"] = {{"fraction", o->inject}, {"swapped", ex.swapped.size()}, {"recovered", ex.recovered},
                       {"recall", ex.recall()}, {"precision", ex.precision()}};
    } else {
      report = audit_labels(weights, clips);
    }
    j["audited"] = report.audited;
    auto& skipped = j["skipped"] = nlohmann::json::array();
    for (std::size_t i : report.skipped) skipped.push_back(clips[i].clip.source);
    auto& flagged = j["flagged"] = nlohmann::json::array();
    for (const auto& e : report.flagged) {
      flagged.push_back({{"source", e.source},
                         {"given", names.name(e.given_class)},
                         {"predicted", names.name(e.predicted_class)},
                         {"confidence", e.confidence}});
    }
    emit(o->out, j.dump(2) + "\n");
  });
}

void register_serve(CLI::App& app) {
  auto* cmd = app.add_subcommand("serve", "Run the streaming detection service (WebSocket /session, GET /health)");
  struct Opts {
    std::string model, postproc, address = "127.0.0.1", aggressors;
    unsigned short port = 8765;
    int threads = 2;
    double negative_seconds = 60.0;
    std::uint64_t seed = 1;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model, "Weight file")->required();
  cmd->add_option("--postproc", o->postproc, "Optimized post-processor JSON");
  cmd->add_option("--address", o->address, "Bind address");
  cmd->add_option("--port", o->port, "Port (0 picks a free one)");
  cmd->add_option("--threads", o->threads, "I/O threads");
  cmd->add_option("--aggressors", o->aggressors, "Aggressor corpus for enrollment negatives");
  cmd->add_option("--negative-seconds", o->negative_seconds, "Seconds of enrollment negatives");
  cmd->add_option("--seed", o->seed, "Seed for negative sampling");
  cmd->callback([o] {
    auto weights = std::make_shared<const ModelWeights>(load_weights(o->model));
    ServerOptions opts;
    opts.address = o->address;
    opts.port = o->port;
    opts.threads = o->threads;
    opts.session.negatives =
        std::make_shared<const NegativePool>(negatives_for(*weights, o->aggressors, o->negative_seconds, o->seed));

    // Signals are collected by this thread only.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Server server(weights, load_postproc(o->postproc, weights->classes), opts);
    server.start();
    std::cout << nlohmann::json{{"listening", o->address}, {"port", server.port()},
                                {"model_version", model_version(*weights)}}.dump()
              << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
}

}  // namespace nvsed::cli
