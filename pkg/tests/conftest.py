import numpy as np
import pytest

from meshcal.kinematics import parse_robot


def write_box_stl(path, sx, sy, sz):
    """ASCII STL of an axis-aligned box centered at the origin."""
    x0, x1 = -sx / 2, sx / 2
    y0, y1 = -sy / 2, sy / 2
    z0, z1 = -sz / 2, sz / 2
    quads = [
        [(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)],  # +z
        [(x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)],  # -z
        [(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)],  # +x
        [(x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0)],  # -x
        [(x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0)],  # +y
        [(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)],  # -y
    ]
    lines = ["solid box"]
    for quad in quads:
        for tri in [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]:
            a, b, c = (np.array(v) for v in tri)
            n = np.cross(b - a, c - a)
            n = n / np.linalg.norm(n)
            lines.append(f" facet normal {n[0]:.6e} {n[1]:.6e} {n[2]:.6e}")
            lines.append("  outer loop")
            for v in tri:
                lines.append(f"   vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
            lines.append("  endloop")
            lines.append(" endfacet")
    lines.append("endsolid box")
    path.write_text("\n".join(lines) + "\n")


ARM_URDF = """
<robot name="test_arm">
  <link name="base_link">
    <visual>
      <origin xyz="0 0 0.05"/>
      <geometry><mesh filename="base.stl"/></geometry>
    </visual>
  </link>
  <link name="link1">
    <visual>
      <origin xyz="0 0 0.15"/>
      <geometry><mesh filename="link1.stl"/></geometry>
    </visual>
  </link>
  <link name="link2">
    <visual>
      <origin xyz="0 0 0.125"/>
      <geometry><mesh filename="link2.stl"/></geometry>
    </visual>
  </link>
  <link name="link3">
    <visual>
      <origin xyz="0 0 0.10"/>
      <geometry><mesh filename="link3.stl"/></geometry>
    </visual>
  </link>
  <joint name="j1" type="revolute">
    <parent link="base_link"/>
    <child link="link1"/>
    <origin xyz="0 0 0.10"/>
    <axis xyz="0 0 1"/>
    <limit lower="-2.9" upper="2.9"/>
  </joint>
  <joint name="j2" type="revolute">
    <parent link="link1"/>
    <child link="link2"/>
    <origin xyz="0 0 0.30"/>
    <axis xyz="0 1 0"/>
    <limit lower="-2.0" upper="2.0"/>
  </joint>
  <joint name="j3" type="revolute">
    <parent link="link2"/>
    <child link="link3"/>
    <origin xyz="0 0 0.25"/>
    <axis xyz="0 1 0"/>
    <limit lower="-2.0" upper="2.0"/>
  </joint>
</robot>
"""

PLANAR_URDF = """
<robot name="planar_arm">
  <link name="base_link"/>
  <link name="link1">
    <visual>
      <origin xyz="0.5 0 0"/>
      <geometry><mesh filename="beam.stl"/></geometry>
    </visual>
  </link>
  <link name="tool">
    <visual>
      <geometry><mesh filename="tip.stl"/></geometry>
    </visual>
  </link>
  <joint name="shoulder" type="revolute">
    <parent link="base_link"/>
    <child link="link1"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.0" upper="3.0"/>
  </joint>
  <joint name="wrist" type="fixed">
    <parent link="link1"/>
    <child link="tool"/>
    <origin xyz="1 0 0"/>
  </joint>
</robot>
"""


def make_arm_dir(root):
    """Write the 3-joint arm URDF + meshes into root; returns the URDF path."""
    write_box_stl(root / "base.stl", 0.12, 0.12, 0.10)
    write_box_stl(root / "link1.stl", 0.08, 0.08, 0.30)
    write_box_stl(root / "link2.stl", 0.06, 0.06, 0.25)
    write_box_stl(root / "link3.stl", 0.05, 0.05, 0.20)
    urdf = root / "arm.urdf"
    urdf.write_text(ARM_URDF)
    return urdf


@pytest.fixture(scope="session")
def arm_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("arm")
    make_arm_dir(root)
    return root


@pytest.fixture(scope="session")
def arm_model(arm_dir):
    return parse_robot((arm_dir / "arm.urdf").read_text(), arm_dir)


def make_planar_dir(root):
    """Write the planar arm URDF + meshes into root; returns the URDF path."""
    write_box_stl(root / "beam.stl", 1.0, 0.05, 0.05)
    write_box_stl(root / "tip.stl", 0.04, 0.04, 0.04)
    urdf = root / "planar.urdf"
    urdf.write_text(PLANAR_URDF)
    return urdf


@pytest.fixture(scope="session")
def planar_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("planar")
    make_planar_dir(root)
    return root


@pytest.fixture(scope="session")
def planar_model(planar_dir):
    return parse_robot((planar_dir / "planar.urdf").read_text(), planar_dir)
