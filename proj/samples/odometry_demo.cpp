// Plays a dataset through the messenger into the monocular tracker and
// prints the SIM3-aligned APE against the dataset's ground truth.
//
//   odometry_demo [path/to/sequence.synthetic]

#include <cstdio>
#include <iostream>

#include "slamkit/dataset.hpp"
#include "slamkit/evaluation.hpp"
#include "slamkit/messenger.hpp"
#include "slamkit/odometry.hpp"

int main(int argc, char** argv) {
  using namespace slamkit;
  const std::string path = argc > 1 ? argv[1] : SLAMKIT_SAMPLES_DIR "/orbit.synthetic";
  try {
    const auto stream = dataset::open(path);
    odometry::MonocularTracker tracker(*stream.camera());
    Messenger m;
    auto sub = m.subscribe<dataset::ImageFrame>(
        topics::kImage, [&](const std::shared_ptr<const dataset::ImageFrame>& f) { tracker.track(*f); });
    stream.play(m);
    tracker.finish();

    const auto r = evaluation::ape(tracker.trajectory(), stream.ground_truth(), {evaluation::AlignMode::kSIM3, true, 1e-6});
    std::printf("poses %zu  lost %zu  points %zu\n", r.timestamps.size(), tracker.lost_frames(),
                tracker.map().points().size());
    std::printf("ape rmse %.6f  max %.6f  rotation rmse %.6f rad\n", r.translation.rmse, r.translation.max,
                r.rotation.rmse);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
