#include "signloop/motion/motion.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace signloop;
using signloop::testing::changed_frames;
using signloop::testing::random_buffer;
using signloop::testing::random_pose;

// Independent restatement of the window rule used as an oracle.
static std::pair<long, long> window_oracle(long t_edit, long delta, long T) {
  long lo = t_edit - delta / 2;
  if (lo < 1) lo = 1;
  long hi = lo + delta - 1;
  if (hi > T) hi = T;
  return {lo, hi};
}

TEST(ComputeWindow, SpecExamples) {
  EXPECT_EQ(compute_window(100, 50, 1000), (FrameRange{75, 124}));
  EXPECT_EQ(compute_window(5, 50, 1000), (FrameRange{1, 50}));
  EXPECT_EQ(compute_window(995, 50, 1000), (FrameRange{970, 1000}));
}

TEST(ComputeWindow, Errors) {
  EXPECT_THROW(compute_window(0, 50, 10), RangeError);
  EXPECT_THROW(compute_window(11, 50, 10), RangeError);
  EXPECT_THROW(compute_window(5, 0, 10), ConfigError);
}

TEST(ComputeWindow, ContainmentProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20000; ++trial) {
    const long T = std::uniform_int_distribution<long>(1, 3000)(rng);
    const long delta = std::uniform_int_distribution<long>(1, 200)(rng);
    const long t_edit = std::uniform_int_distribution<long>(1, T)(rng);
    const FrameRange w = compute_window(t_edit, delta, T);
    ASSERT_EQ(std::make_pair(w.first, w.last), window_oracle(t_edit, delta, T));
    ASSERT_GE(w.first, 1);
    ASSERT_LE(w.first, w.last);
    ASSERT_LE(w.last, T);
    ASSERT_LE(w.size(), delta);
    if (T >= delta) {
      ASSERT_TRUE(w.contains(t_edit)) << t_edit << " " << delta << " " << T;
    }
  }
}

TEST(ContextRange, ClampsToAvailablePrefix) {
  EXPECT_EQ(context_range(75, 8), (FrameRange{67, 74}));
  EXPECT_EQ(context_range(3, 8), (FrameRange{1, 2}));
  EXPECT_EQ(context_range(1, 8).size(), 0);
}

TEST(PoseVector, RejectsWrongLengthAndNonFinite) {
  std::vector<double> v(227, 0.0);
  EXPECT_THROW(PoseVector{v}, ConfigError);
  v.push_back(std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(PoseVector{v}, ConfigError);
  v.back() = 1.0;
  const PoseVector p(v);
  EXPECT_EQ(p.body().size(), 75u);
  EXPECT_EQ(p.hand().size(), 143u);
  EXPECT_EQ(p.au().size(), 10u);
  EXPECT_EQ(p.au().back(), 1.0);
}

TEST(SeqBuffer, SliceBasics) {
  std::mt19937_64 rng(1);
  const SeqBuffer buf = random_buffer(10, rng);
  const auto s = buf.slice(3, 5);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].timestamp, 3);
  EXPECT_EQ(s[2].timestamp, 5);
  EXPECT_EQ(buf.slice(1, 10).size(), 10u);
  EXPECT_THROW(buf.slice(5, 3), RangeError);
  EXPECT_THROW(buf.slice(0, 3), RangeError);
  EXPECT_THROW(buf.slice(3, 11), RangeError);
}

TEST(SeqBuffer, SliceThenWriteBackIsIdentity) {
  std::mt19937_64 rng(2);
  SeqBuffer buf = random_buffer(40, rng);
  const auto before = buf.checksum();
  const auto s = buf.slice(7, 19);
  buf.write_back(7, s);
  EXPECT_EQ(buf.checksum(), before);
}

TEST(SeqBuffer, WriteBackChangesExactlyTheRange) {
  std::mt19937_64 rng(3);
  SeqBuffer buf = random_buffer(1000, rng);
  const SeqBuffer copy = buf;
  std::vector<Frame> patch;
  for (int i = 0; i < 50; ++i) patch.push_back({random_pose(rng), 0});
  buf.write_back(75, patch);
  const auto diff = changed_frames(copy, buf);
  ASSERT_EQ(diff.size(), 50u);
  EXPECT_EQ(diff.front(), 75);
  EXPECT_EQ(diff.back(), 124);
  EXPECT_EQ(buf.at(80).timestamp, 80);  // slots keep their own indices
}

TEST(SeqBuffer, WriteBackEdgeCases) {
  std::mt19937_64 rng(4);
  SeqBuffer buf = random_buffer(20, rng);
  const SeqBuffer copy = buf;
  buf.write_back(5, std::vector<Frame>{});
  EXPECT_EQ(buf.checksum(), copy.checksum());

  std::vector<Frame> two{{random_pose(rng), 0}, {random_pose(rng), 0}};
  buf.write_back(19, two);
  EXPECT_EQ(changed_frames(copy, buf), (std::vector<long>{19, 20}));
  EXPECT_THROW(buf.write_back(20, two), RangeError);  // no implicit append
}

TEST(SeqBuffer, LocalityProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const long T = std::uniform_int_distribution<long>(1, 120)(rng);
    SeqBuffer buf = random_buffer(T, rng);
    const SeqBuffer copy = buf;
    const long start = std::uniform_int_distribution<long>(1, T)(rng);
    const long n = std::uniform_int_distribution<long>(0, T - start + 1)(rng);
    std::vector<Frame> patch;
    for (long i = 0; i < n; ++i) patch.push_back({random_pose(rng), 0});
    buf.write_back(start, patch);
    std::vector<long> expected;
    for (long t = start; t < start + n; ++t) expected.push_back(t);
    ASSERT_EQ(changed_frames(copy, buf), expected);
  }
}

TEST(SeqBuffer, SlicePurityUnderManyCalls) {
  std::mt19937_64 rng(6);
  const SeqBuffer buf = random_buffer(300, rng);
  const auto before = buf.checksum();
  for (int i = 0; i < 1000; ++i) {
    const long a = std::uniform_int_distribution<long>(1, 300)(rng);
    const long b = std::uniform_int_distribution<long>(a, 300)(rng);
    auto s = buf.slice(a, b);
    ASSERT_EQ(static_cast<long>(s.size()), b - a + 1);
    s.front().timestamp = -1;  // mutate the copy
  }
  EXPECT_EQ(buf.checksum(), before);
}

TEST(SeqBuffer, RefusesAppendPastCapacity) {
  SeqBuffer buf(2);
  buf.append(PoseVector{});
  buf.append(PoseVector{});
  EXPECT_EQ(buf.at(2).timestamp, 2);
  EXPECT_THROW(buf.append(PoseVector{}), RangeError);
}
