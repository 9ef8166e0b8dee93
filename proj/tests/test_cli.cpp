#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "wavediff/checkpoint.hpp"

namespace {

const std::string kBin = WAVEDIFF_BIN;

std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("wavediff_cli_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

int run(const std::string& args) {
  const std::string cmd = kBin + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("usage errors exit 1, unknown flags print usage") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("sample --nonsense 3") == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE("gen-data is byte-identical across reruns") {
  const std::string d1 = temp_dir("gen1");
  const std::string d2 = temp_dir("gen2");
  CHECK(run("gen-data --kind shapes --res 32 --count 8 --seed 7 --out " + d1) == 0);
  CHECK(run("gen-data --kind shapes --res 32 --count 8 --seed 7 --out " + d2) == 0);
  for (int i = 0; i < 8; ++i) {
    const std::string name = "/sample_" + std::to_string(i) + ".ppm";
    CHECK(read_file(d1 + name) == read_file(d2 + name));
  }
}

TEST_CASE("dwt then idwt round-trips an image to within one quantization step") {
  const std::string dir = temp_dir("roundtrip");
  CHECK(run("gen-data --kind checkerboard --res 16 --count 1 --seed 3 --out " + dir) == 0);
  const std::string img = dir + "/sample_0.ppm";
  CHECK(run("dwt --in " + img + " --out " + dir + "/y.wdt") == 0);
  CHECK(run("idwt --in " + dir + "/y.wdt --out " + dir + "/back.ppm") == 0);

  // the forward transform is exactly invertible, so the decoded image
  // re-quantizes to the identical bytes
  CHECK(read_file(img) == read_file(dir + "/back.ppm"));

  CHECK(run("dwt --in " + dir + "/missing.ppm --out " + dir + "/z.wdt") == 2);
  write_file(dir + "/junk.wdt", "garbage");
  CHECK(run("idwt --in " + dir + "/junk.wdt --out " + dir + "/x.ppm") == 2);
}

TEST_CASE("train writes ckpt_{step}.wdif and metrics.csv; sample emits files + manifest") {
  const std::string dir = temp_dir("train");
  const std::string cfg = dir + "/run.cfg";
  write_file(cfg,
             "model.levels = 2\n"
             "model.base_channels = 8\n"
             "model.channel_mult = 1,1\n"
             "model.attention_resolutions = none\n"
             "model.latent_dim = 8\n"
             "model.latent_embed_dim = 16\n"
             "model.latent_mapping_layers = 2\n"
             "train.batch = 8\n"
             "train.epochs = 1\n"
             "train.eval_samples = 4\n"
             "data.resolution = 8\n"
             "data.count = 8\n");
  CHECK(run("train --config " + cfg + " --out " + dir + "/run") == 0);
  CHECK(std::filesystem::exists(dir + "/run/ckpt_1.wdif"));
  CHECK(std::filesystem::exists(dir + "/run/metrics.csv"));
  {
    std::ifstream metrics(dir + "/run/metrics.csv");
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "step,epoch,L_adv_D,L_adv_G,L_rec,r1,mode_coverage,moment_err");
  }

  CHECK(run("sample --checkpoint " + dir + "/run/ckpt_1.wdif --num 3 --seed 5 --out " + dir +
            "/s1") == 0);
  CHECK(std::filesystem::exists(dir + "/s1/sample_0.ppm"));
  CHECK(std::filesystem::exists(dir + "/s1/sample_2.ppm"));
  CHECK(std::filesystem::exists(dir + "/s1/manifest.json"));

  // identical seeds reproduce sample bytes
  CHECK(run("sample --checkpoint " + dir + "/run/ckpt_1.wdif --num 3 --seed 5 --out " + dir +
            "/s2") == 0);
  CHECK(read_file(dir + "/s1/sample_0.ppm") == read_file(dir + "/s2/sample_0.ppm"));
  CHECK(read_file(dir + "/s1/manifest.json") == read_file(dir + "/s2/manifest.json"));

  // WAVEDIFF_SEED env var as --seed fallback
  const std::string env_cmd = "WAVEDIFF_SEED=5 " + kBin + " sample --checkpoint " + dir +
                              "/run/ckpt_1.wdif --num 3 --out " + dir + "/s3 >/dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(env_cmd.c_str())) == 0);
  CHECK(read_file(dir + "/s1/sample_1.ppm") == read_file(dir + "/s3/sample_1.ppm"));

  // bench on the checkpoint emits the frozen CSV header
  CHECK(run("bench --checkpoint " + dir + "/run/ckpt_1.wdif --batch 2 --trials 2 --warmup 1 " +
            "--out " + dir + "/bench.csv") == 0);
  std::ifstream bench(dir + "/bench.csv");
  std::string header;
  std::getline(bench, header);
  CHECK(header == "config,resolution,steps,params,flops,mem,t_mean_s,t_p50_s,t_p95_s");

  CHECK(run("sample --checkpoint " + dir + "/does_not_exist.wdif --out " + dir + "/x") == 2);

  // the checkpoint echoes the input config byte for byte
  auto lc = wavediff::load_checkpoint(dir + "/run/ckpt_1.wdif");
  CHECK(lc.config_text == read_file(cfg));
}

TEST_CASE("train --resume continues to the same bytes as the uninterrupted run") {
  const std::string dir = temp_dir("resume");
  write_file(dir + "/run.cfg",
             "model.levels = 2\n"
             "model.base_channels = 8\n"
             "model.channel_mult = 1,1\n"
             "model.attention_resolutions = none\n"
             "model.latent_dim = 8\n"
             "model.latent_embed_dim = 16\n"
             "model.latent_mapping_layers = 2\n"
             "train.batch = 8\n"
             "train.epochs = 2\n"
             "train.eval_samples = 4\n"
             "train.checkpoint_every = 1\n"
             "data.resolution = 8\n"
             "data.count = 8\n");
  CHECK(run("train --config " + dir + "/run.cfg --out " + dir + "/full") == 0);
  CHECK(run("train --resume " + dir + "/full/ckpt_1.wdif --out " + dir + "/cont") == 0);
  CHECK(read_file(dir + "/full/ckpt_2.wdif") == read_file(dir + "/cont/ckpt_2.wdif"));
}

TEST_CASE("bench reference presets emit analytic rows") {
  const std::string dir = temp_dir("bench");
  CHECK(run("bench --preset published --out " + dir + "/costs.csv") == 0);
  std::ifstream csv(dir + "/costs.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 1 + 8);  // header + ours/baseline per preset
}
