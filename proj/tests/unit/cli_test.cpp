#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nvsed/audio.hpp"
#include "nvsed/events.hpp"
#include "nvsed/tcn.hpp"
#include "test_util.hpp"

namespace nvsed {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int status = -1;
  std::string out;
};

// Runs a shell command and captures its standard output.
Outcome run(const std::string& cmd) {
  Outcome r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::vector<Event> parse_events(const std::string& text, const ClassSet& classes) {
  std::vector<Event> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const json j = json::parse(line);
    out.push_back({classes.index_of(j.at("class").get<std::string>()), j.at("frame").get<std::int64_t>()});
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("nvsed_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    weights = testing::random_weights(testing::tiny_spec(16, 4, 2), 21, 0.2f);
    save_weights(weights, dir / "model.nvsd");
    config = PostProcConfig::defaults();
    config.theta.fill(0.52f);
    config.tau.fill(2);
    config.theta_bg = 0.99f;
    config.refractory = 10;
    std::ofstream(dir / "postproc.json") << to_json(config, weights.classes).dump();

    const AudioClip clip = testing::noise_clip(16000 * 8, 9, 0.2);
    write_wav(dir / "clip.wav", clip);
    const auto pcm = float_to_pcm16(clip.samples);
    std::ofstream(dir / "clip.pcm", std::ios::binary)
        .write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(2 * pcm.size()));
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string base() const {
    return std::string(NVSED_CLI_PATH) + " detect --model " + (dir / "model.nvsd").string() + " --postproc " +
           (dir / "postproc.json").string();
  }

  fs::path dir;
  ModelWeights weights;
  PostProcConfig config;
};

TEST_F(Cli, DetectMatchesLibraryProcess) {
  const AudioClip clip = read_wav(dir / "clip.wav");
  const auto expected = process(forward(weights, compute_features(clip)).probs, config);
  ASSERT_FALSE(expected.empty());
  const Outcome r = run(base() + " --wav " + (dir / "clip.wav").string());
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(parse_events(r.out, weights.classes), expected);
}

TEST_F(Cli, StdinPcmChunkingDoesNotChangeEvents) {
  const Outcome ref = run(base() + " --wav " + (dir / "clip.wav").string());
  ASSERT_EQ(ref.status, 0);
  for (int chunk : {1, 7, 160, 333, 4096}) {
    const Outcome r = run(base() + " --stdin-pcm --chunk " + std::to_string(chunk) + " < " + (dir / "clip.pcm").string());
    ASSERT_EQ(r.status, 0);
    EXPECT_EQ(r.out, ref.out) << chunk;
  }
  // A pipe delivering odd byte counts.
  const Outcome odd = run("python3 -c \"import sys,time\nd=open('" + (dir / "clip.pcm").string() +
                      "','rb').read()\nfor i in range(0,len(d),999):\n sys.stdout.buffer.write(d[i:i+999]);"
                      "sys.stdout.flush()\" | " + base() + " --stdin-pcm --chunk 5000");
  ASSERT_EQ(odd.status, 0);
  EXPECT_EQ(odd.out, ref.out);
}

TEST_F(Cli, ErrorsAreSingleJsonLines) {
  for (const std::string& args : std::vector<std::string>{" detect --model /nonexistent.nvsd --wav x.wav", " train", " frobnicate",
                                 " detect --model " + (dir / "clip.wav").string() + " --wav x.wav"}) {
    const Outcome r = run(std::string(NVSED_CLI_PATH) + args + " 2>&1 >/dev/null");
    EXPECT_EQ(r.status, 2) << args;
    ASSERT_FALSE(r.out.empty()) << args;
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
    const json j = json::parse(r.out);
    EXPECT_TRUE(j.contains("error")) << r.out;
    EXPECT_TRUE(j.contains("message"));
  }
}

TEST_F(Cli, DefaultsArePrintable) {
  const Outcome synth = run(std::string(NVSED_CLI_PATH) + " synth --dump-defaults");
  ASSERT_EQ(synth.status, 0);
  EXPECT_EQ(json::parse(synth.out).at("repetitions"), 10);
  const Outcome train = run(std::string(NVSED_CLI_PATH) + " train --dump-defaults");
  ASSERT_EQ(train.status, 0);
  EXPECT_EQ(json::parse(train.out).at("batch_frames"), 1000);
  EXPECT_EQ(run(std::string(NVSED_CLI_PATH) + " --help > /dev/null").status, 0);
}

}  // namespace
}  // namespace nvsed
